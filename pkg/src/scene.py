"""
World model, scenario files, and the scene description grammar.

A scenario is the ground truth of one flight: arena, obstacles (with
optional timed motion), an optional gate, start positions, a goal script and
the lighting condition. Geometry is stored in meters; grid cells are
derived from the arena's grid resolution and never stored.

A scene description is what the perception stage reports about a scenario:
obstacle counts before/after the gate, per-obstacle kind and grid cell, and a
closely/widely spaced label. It has one canonical text form, e.g.

    2 cylindrical stands; 1 before the gate; 1 after the gate; widely spaced;
    cylindrical stand at (40, 70); cylindrical stand at (70, 30)

(one line in practice). File formats are described in design/data_format.md.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from errors import DescriptionParseError, ScenarioError, SpacingNotApplicable, ValidationError

logger = logging.getLogger(__name__)

Point = tuple[float, float]

DRONE_RADIUS = 0.06
WALL_HALF_THICKNESS = 0.02
SPACING_THRESHOLD = 20.0
FOLLOWER_COUNTS = (2, 4)
DEFAULT_GRID = 100


class ObstacleKind(str, Enum):
    SOFT = "soft"   # alive: humans
    HARD = "hard"   # inanimate: cylindrical stands, walls


class Lighting(str, Enum):
    OPTIMAL = "optimal"
    INADEQUATE = "inadequate"


class Spacing(str, Enum):
    CLOSELY = "closely spaced"
    WIDELY = "widely spaced"


def dominant_kind(kinds: Iterable[ObstacleKind]) -> ObstacleKind:
    """Soft wins as soon as one soft obstacle is present; empty scenes are Hard."""
    return ObstacleKind.SOFT if ObstacleKind.SOFT in set(kinds) else ObstacleKind.HARD


# ── Geometry types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Waypoint:
    t: float
    pos: Point


def interpolate_path(times: np.ndarray, points: np.ndarray, t) -> np.ndarray:
    """Linear interpolation along timed waypoints, held constant outside the script."""
    return np.stack([np.interp(t, times, points[:, 0]),
                     np.interp(t, times, points[:, 1])], axis=-1)


def _path_arrays(waypoints: Sequence[Waypoint]) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([w.t for w in waypoints], dtype=float)
    points = np.array([w.pos for w in waypoints], dtype=float).reshape(-1, 2)
    return times, points


@dataclass(frozen=True)
class Arena:
    width: float
    height: float
    grid: int = DEFAULT_GRID

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.width / self.grid, self.height / self.grid

    def contains(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def to_cell(self, p) -> tuple[int, int]:
        i = math.floor(float(p[0]) / self.width * self.grid)
        j = math.floor(float(p[1]) / self.height * self.grid)
        top = self.grid - 1
        return min(max(i, 0), top), min(max(j, 0), top)

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        cw, ch = self.cell_size
        return np.array([(cell[0] + 0.5) * cw, (cell[1] + 0.5) * ch])


@dataclass(frozen=True)
class Obstacle:
    id: int
    kind: ObstacleKind
    pos: Point
    radius: float
    motion: tuple[Waypoint, ...] = ()

    @property
    def is_moving(self) -> bool:
        return bool(self.motion)

    def path(self) -> tuple[np.ndarray, np.ndarray]:
        """Waypoint arrays starting from `pos` at t=0 unless the motion script says otherwise."""
        waypoints = list(self.motion)
        if not waypoints or waypoints[0].t > 0.0:
            waypoints.insert(0, Waypoint(0.0, self.pos))
        return _path_arrays(waypoints)

    def position_at(self, t: float) -> np.ndarray:
        if not self.motion:
            return np.array(self.pos, dtype=float)
        times, points = self.path()
        return interpolate_path(times, points, t)


@dataclass(frozen=True)
class Gate:
    center: Point
    width: float
    theta: float   # direction of travel through the opening

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def tangent(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def side(self, p) -> float:
        """Negative before the gate, positive after it."""
        return float(np.dot(np.asarray(p, dtype=float) - np.asarray(self.center), self.normal))

    def walls(self, arena: Arena) -> list[tuple[np.ndarray, np.ndarray]]:
        """The two wall segments either side of the opening, clipped to the arena."""
        c = np.asarray(self.center, dtype=float)
        t = self.tangent
        lo, hi = -math.inf, math.inf
        for k, extent in enumerate((arena.width, arena.height)):
            if abs(t[k]) < 1e-12:
                continue
            a, b = (0.0 - c[k]) / t[k], (extent - c[k]) / t[k]
            lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
        half = self.width / 2.0
        segments = []
        if hi > half:
            segments.append((c + half * t, c + hi * t))
        if lo < -half:
            segments.append((c + lo * t, c - half * t))
        return segments


@dataclass(frozen=True)
class Scenario:
    arena: Arena
    obstacles: tuple[Obstacle, ...]
    gate: Gate | None
    leader_start: Point
    follower_starts: tuple[Point, ...]
    goal: tuple[Waypoint, ...]
    lighting: Lighting = Lighting.OPTIMAL

    @property
    def n_followers(self) -> int:
        return len(self.follower_starts)

    @property
    def is_dynamic(self) -> bool:
        return len(self.goal) > 1 or any(o.is_moving for o in self.obstacles)

    @property
    def dominant_kind(self) -> ObstacleKind:
        return dominant_kind(o.kind for o in self.obstacles)

    @property
    def goal_end_time(self) -> float:
        return self.goal[-1].t

    def goal_at(self, t) -> np.ndarray:
        times, points = _path_arrays(self.goal)
        return interpolate_path(times, points, t)

    def wall_segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.gate.walls(self.arena) if self.gate is not None else []


# ── Scene description ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ObstacleEntry:
    kind: ObstacleKind
    cell: tuple[int, int]


@dataclass(frozen=True)
class SceneDescription:
    before: int
    after: int
    entries: tuple[ObstacleEntry, ...] = ()
    spacing: Spacing | None = None

    def __post_init__(self):
        issues = []
        if self.before < 0 or self.after < 0:
            issues.append(("before/after", "counts must be non-negative"))
        if self.before + self.after != len(self.entries):
            issues.append(("before/after",
                           f"{self.before} + {self.after} != {len(self.entries)} entries"))
        if (self.spacing is None) != (len(self.entries) < 2):
            issues.append(("spacing", "label is present iff there are at least 2 obstacles"))
        if issues:
            raise ValidationError(issues, "scene description")

    @property
    def total(self) -> int:
        return len(self.entries)

    @property
    def kinds(self) -> tuple[ObstacleKind, ...]:
        return tuple(e.kind for e in self.entries)

    @property
    def dominant_kind(self) -> ObstacleKind:
        return dominant_kind(self.kinds)

    def count(self, kind: ObstacleKind) -> int:
        return sum(1 for e in self.entries if e.kind is kind)

    def cell_issues(self, grid: int) -> list[tuple[str, str]]:
        return [(f"entries[{n}].cell", f"{e.cell} outside [0, {grid})")
                for n, e in enumerate(self.entries)
                if not all(0 <= v < grid for v in e.cell)]


def classify_spacing(positions: Sequence[Sequence[float]],
                     threshold: float = SPACING_THRESHOLD) -> Spacing:
    """Widely spaced iff the minimum pairwise distance strictly exceeds the threshold."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise SpacingNotApplicable(len(pts))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    nearest = dist[np.triu_indices(len(pts), k=1)].min()
    return Spacing.WIDELY if nearest > threshold else Spacing.CLOSELY


_SEP = "; "
_NOUNS = {
    ObstacleKind.SOFT: ("human", "humans"),
    ObstacleKind.HARD: ("cylindrical stand", "cylindrical stands"),
}
_NOUN_LOOKUP = {
    word: (kind, plural)
    for kind, forms in _NOUNS.items()
    for plural, word in enumerate(forms)
}
_KIND_ORDER = (ObstacleKind.SOFT, ObstacleKind.HARD)

_NUMBERED_RE = re.compile(r"([1-9]\d*) (.+)")
_SIDE_RE = re.compile(r"(?:no obstacles|([1-9]\d*)) (before|after) the gate")
_ENTRY_RE = re.compile(r"(.+?) at \((0|[1-9]\d*), (0|[1-9]\d*)\)")


def _noun(kind: ObstacleKind, n: int) -> str:
    return _NOUNS[kind][0 if n == 1 else 1]


def _side_clause(n: int, side: str) -> str:
    return f"{n} {side} the gate" if n else f"no obstacles {side} the gate"


def render_description(desc: SceneDescription) -> str:
    counts = [(k, desc.count(k)) for k in _KIND_ORDER]
    parts = [" and ".join(f"{n} {_noun(k, n)}" for k, n in counts if n) or "no obstacles",
             _side_clause(desc.before, "before"),
             _side_clause(desc.after, "after")]
    if desc.spacing is not None:
        parts.append(desc.spacing.value)
    parts.extend(f"{_NOUNS[e.kind][0]} at ({e.cell[0]}, {e.cell[1]})" for e in desc.entries)
    return _SEP.join(parts)


def _split_clauses(text: str) -> list[tuple[int, str]]:
    out, pos = [], 0
    for part in text.split(_SEP):
        out.append((pos, part))
        pos += len(part) + len(_SEP)
    return out


def _parse_counts(pos: int, clause: str) -> dict[ObstacleKind, int]:
    counts: dict[ObstacleKind, int] = {}
    if clause == "no obstacles":
        return counts
    offset = pos
    for piece in clause.split(" and "):
        m = _NUMBERED_RE.fullmatch(piece)
        if not m:
            raise DescriptionParseError("expected an obstacle count", offset, piece)
        n, word = int(m.group(1)), m.group(2)
        if word not in _NOUN_LOOKUP:
            raise DescriptionParseError("unknown obstacle word", offset + m.start(2), word)
        kind, plural = _NOUN_LOOKUP[word]
        if n == 0 or bool(plural) != (n != 1):
            raise DescriptionParseError("count and noun disagree", offset, piece)
        if counts and _KIND_ORDER.index(kind) <= max(_KIND_ORDER.index(k) for k in counts):
            raise DescriptionParseError("kinds out of canonical order", offset, word)
        counts[kind] = n
        offset += len(piece) + len(" and ")
    return counts


def _parse_side(pos: int, clause: str, side: str) -> int:
    m = _SIDE_RE.fullmatch(clause)
    if not m or m.group(2) != side:
        raise DescriptionParseError(f"expected the '{side} the gate' clause", pos, clause)
    return int(m.group(1)) if m.group(1) is not None else 0


def parse_description(text: str) -> SceneDescription:
    """Inverse of render_description; rejects anything outside the canonical form."""
    if not text or not text.strip():
        raise DescriptionParseError("empty description", 0)
    clauses = _split_clauses(text)
    counts = _parse_counts(*clauses[0])
    if len(clauses) < 3:
        pos, clause = clauses[-1]
        raise DescriptionParseError("description is missing the gate clauses", pos, clause)
    before = _parse_side(*clauses[1], "before")
    after = _parse_side(*clauses[2], "after")

    rest = clauses[3:]
    spacing = None
    if rest and rest[0][1] in {s.value for s in Spacing}:
        spacing = Spacing(rest[0][1])
        rest = rest[1:]

    entries = []
    for pos, clause in rest:
        m = _ENTRY_RE.fullmatch(clause)
        if not m:
            raise DescriptionParseError("unexpected clause", pos, clause)
        word = m.group(1)
        if word not in _NOUN_LOOKUP or _NOUN_LOOKUP[word][1]:
            raise DescriptionParseError("unknown obstacle word", pos, word)
        entries.append(ObstacleEntry(_NOUN_LOOKUP[word][0], (int(m.group(2)), int(m.group(3)))))

    total = sum(counts.values())
    if len(entries) != total or any(
            sum(1 for e in entries if e.kind is k) != n for k, n in counts.items()):
        raise DescriptionParseError("obstacle entries do not match the count clause", 0, clauses[0][1])
    if before + after != total:
        raise DescriptionParseError(f"before + after != {total}", clauses[1][0], clauses[1][1])
    if (spacing is None) != (total < 2):
        where = rest[0][0] if rest else len(text)
        raise DescriptionParseError("spacing label present iff at least 2 obstacles", where)
    return SceneDescription(before, after, tuple(entries), spacing)


# ── Scenario files ─────────────────────────────────────────────────────────────

_TOP_KEYS = {"arena", "obstacles", "gate", "leader_start", "follower_starts", "goal", "lighting"}
_REQUIRED_KEYS = _TOP_KEYS - {"gate"}


class _Reader:
    """Collects field-level issues while converting a JSON document."""

    def __init__(self):
        self.issues: list[tuple[str, str]] = []

    def fail(self, field: str, msg: str):
        self.issues.append((field, msg))
        return None

    def keys(self, obj, field: str, allowed: set[str], required: set[str]) -> bool:
        if not isinstance(obj, dict):
            self.fail(field, "expected an object")
            return False
        for key in sorted(set(obj) - allowed):
            self.fail(f"{field}.{key}" if field else key, "unknown key")
        for key in sorted(required - set(obj)):
            self.fail(f"{field}.{key}" if field else key, "missing field")
        return True

    def number(self, value, field: str) -> float | None:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            return self.fail(field, f"expected a finite number, got {value!r}")
        return float(value)

    def point(self, value, field: str) -> Point | None:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            return self.fail(field, f"expected [x, y], got {value!r}")
        x, y = self.number(value[0], f"{field}[0]"), self.number(value[1], f"{field}[1]")
        return None if x is None or y is None else (x, y)

    def enum(self, cls, value, field: str):
        try:
            return cls(value)
        except ValueError:
            allowed = "|".join(m.value for m in cls)
            return self.fail(field, f"expected {allowed}, got {value!r}")

    def waypoints(self, value, field: str) -> tuple[Waypoint, ...] | None:
        if not isinstance(value, list):
            return self.fail(field, "expected a list of {t, pos}")
        out = []
        for n, item in enumerate(value):
            f = f"{field}[{n}]"
            if not self.keys(item, f, {"t", "pos"}, {"t", "pos"}):
                continue
            t, pos = self.number(item.get("t"), f"{f}.t"), self.point(item.get("pos"), f"{f}.pos")
            if t is not None and pos is not None:
                out.append(Waypoint(t, pos))
        return tuple(out)


def scenario_from_dict(data: dict, source: str | None = None) -> Scenario:
    r = _Reader()
    if not r.keys(data, "", _TOP_KEYS, _REQUIRED_KEYS):
        raise ScenarioError(r.issues, source)

    arena = None
    a = data.get("arena")
    if a is not None and r.keys(a, "arena", {"width", "height", "grid"}, {"width", "height"}):
        w, h = r.number(a.get("width"), "arena.width"), r.number(a.get("height"), "arena.height")
        grid = a.get("grid", DEFAULT_GRID)
        if isinstance(grid, bool) or not isinstance(grid, int):
            r.fail("arena.grid", f"expected an integer, got {grid!r}")
        elif w is not None and h is not None:
            arena = Arena(w, h, grid)

    obstacles = []
    raw_obstacles = data.get("obstacles", [])
    if not isinstance(raw_obstacles, list):
        r.fail("obstacles", "expected a list")
        raw_obstacles = []
    for n, o in enumerate(raw_obstacles):
        f = f"obstacles[{n}]"
        if not r.keys(o, f, {"id", "kind", "pos", "radius", "motion"}, {"id", "kind", "pos", "radius"}):
            continue
        oid = o.get("id")
        if isinstance(oid, bool) or not isinstance(oid, int):
            r.fail(f"{f}.id", f"expected an integer, got {oid!r}")
            continue
        kind = r.enum(ObstacleKind, o.get("kind"), f"{f}.kind")
        pos = r.point(o.get("pos"), f"{f}.pos")
        radius = r.number(o.get("radius"), f"{f}.radius")
        motion = r.waypoints(o.get("motion", []), f"{f}.motion")
        if None not in (kind, pos, radius, motion):
            obstacles.append(Obstacle(oid, kind, pos, radius, motion))

    gate = None
    g = data.get("gate")
    if g is not None and r.keys(g, "gate", {"center", "width", "theta"}, {"center", "width", "theta"}):
        center = r.point(g.get("center"), "gate.center")
        width = r.number(g.get("width"), "gate.width")
        theta = r.number(g.get("theta"), "gate.theta")
        if None not in (center, width, theta):
            gate = Gate(center, width, theta)

    leader = r.point(data.get("leader_start"), "leader_start")
    followers = data.get("follower_starts")
    follower_pts = []
    if not isinstance(followers, list):
        r.fail("follower_starts", "expected a list of [x, y]")
    else:
        follower_pts = [r.point(p, f"follower_starts[{n}]") for n, p in enumerate(followers)]
    goal = r.waypoints(data.get("goal"), "goal")
    lighting = r.enum(Lighting, data.get("lighting"), "lighting")

    if r.issues:
        raise ScenarioError(r.issues, source)

    scenario = Scenario(arena, tuple(obstacles), gate, leader, tuple(follower_pts),
                        goal, lighting)
    issues = validate_scenario(scenario)
    if issues:
        raise ScenarioError(issues, source)
    return scenario


def validate_scenario(s: Scenario, drone_radius: float = DRONE_RADIUS) -> list[tuple[str, str]]:
    issues: list[tuple[str, str]] = []
    arena = s.arena
    if not (arena.width > 0 and arena.height > 0):
        issues.append(("arena", "width and height must be positive"))
        return issues
    if arena.grid < 1:
        issues.append(("arena.grid", "grid resolution must be at least 1"))

    def inside(p, field):
        if not arena.contains(p):
            issues.append((field, f"{tuple(p)} outside the {arena.width} x {arena.height} arena"))

    def increasing(waypoints, field):
        times = [w.t for w in waypoints]
        if any(t < 0 for t in times):
            issues.append((field, "waypoint times must be non-negative"))
        if any(b <= a for a, b in zip(times, times[1:])):
            issues.append((field, "waypoint times must be strictly increasing"))

    seen = set()
    for n, o in enumerate(s.obstacles):
        f = f"obstacles[{n}]"
        if o.id in seen:
            issues.append((f"{f}.id", f"duplicate obstacle id {o.id}"))
        seen.add(o.id)
        if not o.radius > 0:
            issues.append((f"{f}.radius", "radius must be positive"))
        inside(o.pos, f"{f}.pos")
        for m, w in enumerate(o.motion):
            inside(w.pos, f"{f}.motion[{m}].pos")
        increasing(o.motion, f"{f}.motion")

    if s.gate is not None:
        if not s.gate.width > 2 * drone_radius:
            issues.append(("gate.width", f"opening must exceed {2 * drone_radius} m"))
        inside(s.gate.center, "gate.center")

    if len(s.follower_starts) not in FOLLOWER_COUNTS:
        issues.append(("follower_starts", f"follower count must be 2 or 4, got {len(s.follower_starts)}"))
    starts = [("leader_start", s.leader_start)] + [
        (f"follower_starts[{n}]", p) for n, p in enumerate(s.follower_starts)]
    for field, p in starts:
        inside(p, field)
    for a in range(len(starts)):
        for b in range(a + 1, len(starts)):
            gap = math.dist(starts[a][1], starts[b][1])
            if gap <= 2 * drone_radius:
                issues.append((starts[b][0], f"within {gap:.3f} m of {starts[a][0]}"))

    if not s.goal:
        issues.append(("goal", "goal script needs at least one waypoint"))
    for m, w in enumerate(s.goal):
        inside(w.pos, f"goal[{m}].pos")
    increasing(s.goal, "goal")
    return issues


def _waypoints_to_list(waypoints: Sequence[Waypoint]) -> list[dict]:
    return [{"t": w.t, "pos": list(w.pos)} for w in waypoints]


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "arena": {"width": s.arena.width, "height": s.arena.height, "grid": s.arena.grid},
        "obstacles": [
            {"id": o.id, "kind": o.kind.value, "pos": list(o.pos), "radius": o.radius,
             "motion": _waypoints_to_list(o.motion)}
            for o in s.obstacles
        ],
        "gate": None if s.gate is None else {
            "center": list(s.gate.center), "width": s.gate.width, "theta": s.gate.theta},
        "leader_start": list(s.leader_start),
        "follower_starts": [list(p) for p in s.follower_starts],
        "goal": _waypoints_to_list(s.goal),
        "lighting": s.lighting.value,
    }


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioError([("file", f"invalid JSON: {e}")], str(path)) from e
    scenario = scenario_from_dict(data, str(path))
    logger.debug("Loaded %s: %d obstacles, %d followers",
                 path, len(scenario.obstacles), scenario.n_followers)
    return scenario


def save_scenario(scenario: Scenario, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(scenario), f, indent=2, ensure_ascii=False)
        f.write("\n")


def scenario_files(directory: Path) -> list[Path]:
    """Scenario files under `directory`, recursively, in stable path order."""
    return sorted(Path(directory).rglob("*.json"))
