"""
Fixed-timestep leader/follower swarm simulation.

The leader follows the potential field toward the (possibly moving) goal.
Followers track wedge slots behind it through impedance links, with slot
deflections from nearby obstacles, gate walls and other drones. Every step
is recorded; metrics are recomputed from the recorded trajectories alone.

Outputs:
  trajectory CSV  t,drone_id,role,x,y,vx,vy
  metrics JSON    see SimMetrics.to_dict()
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from errors import PenetrationError, SimulationError
from impedance import MAX_DT, DeflectionConstants, LinkState, deflection_offsets, step_link
from planner import ApfConfig, Body, clamp_speed, leader_velocity
from retrieval import ImpedanceProfile
from scene import DRONE_RADIUS, WALL_HALF_THICKNESS, ObstacleKind, Scenario, interpolate_path

logger = logging.getLogger(__name__)

WEDGE_ANGLE = math.radians(30.0)
DRONE_LINK_MARGIN = 0.1

# Leader keeps its nearest wedge slot this far outside contact; wider around people.
PLANNING_MARGIN = {ObstacleKind.HARD: 0.1, ObstacleKind.SOFT: 0.4}
PLANNING_STANDOFF = 0.01
HEADING_MIN_SPEED = 1e-6

# Local-minimum escape.
STALL_SPEED_FRACTION = 0.05
STALL_TIME = 2.0
STALL_GOAL_DISTANCE = 0.1
ESCAPE_SPEED_FRACTION = 0.5

# Metrics.
SETTLE_BAND = 0.05
RESIDUAL_WINDOW = 1.0


class Role(str, Enum):
    LEADER = "leader"
    FOLLOWER = "follower"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    max_t: float = 60.0
    collision_radius: float = DRONE_RADIUS
    goal_tol: float = 0.05
    seed: int = 0
    apf: ApfConfig = field(default_factory=ApfConfig)
    deflection: DeflectionConstants = field(default_factory=DeflectionConstants)

    def __post_init__(self):
        if not (0.0 < self.dt <= MAX_DT):
            raise ValueError(f"SimConfig.dt must be in (0, {MAX_DT}], got {self.dt}")
        if self.max_t < 0:
            raise ValueError(f"SimConfig.max_t must be non-negative, got {self.max_t}")
        if not (self.collision_radius > 0 and self.goal_tol > 0):
            raise ValueError("SimConfig.collision_radius and goal_tol must be positive")


@dataclass(frozen=True, eq=False)
class DroneState:
    id: int
    role: Role
    pos: np.ndarray
    vel: np.ndarray
    link: LinkState | None = None


@dataclass(frozen=True, eq=False)
class WorldState:
    """Simulation state; row 0 of pos/vel is the leader, rows 1.. the followers."""
    step_index: int
    t: float
    pos: np.ndarray
    vel: np.ndarray
    heading: float
    link_dx: np.ndarray
    link_dv: np.ndarray
    stall_time: float = 0.0
    escape_sign: float = 0.0
    escapes: tuple[float, ...] = ()
    degenerate: int = 0

    @property
    def drones(self) -> tuple[DroneState, ...]:
        out = [DroneState(0, Role.LEADER, self.pos[0], self.vel[0])]
        for i in range(1, len(self.pos)):
            link = LinkState(self.link_dx[i - 1], self.link_dv[i - 1])
            out.append(DroneState(i, Role.FOLLOWER, self.pos[i], self.vel[i], link))
        return tuple(out)


def formation_offsets(n_followers: int, c: float, heading: float = 0.0) -> np.ndarray:
    """
    Wedge slots behind the leader, rotated by `heading`.

    Follower order: rank-1 left, rank-1 right, then rank-2 left, rank-2 right
    (left is +y when heading along +x). Rank r sits at distance r·c.
    """
    if n_followers not in (2, 4):
        raise ValueError(f"formation supports 2 or 4 followers, got {n_followers}")
    if not c > 0:
        raise ValueError(f"separation distance must be positive, got {c}")
    back, side = -math.cos(WEDGE_ANGLE), math.sin(WEDGE_ANGLE)
    slots = []
    for rank in range(1, n_followers // 2 + 1):
        slots.append((rank * c * back, rank * c * side))
        slots.append((rank * c * back, -rank * c * side))
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    rot = np.array([[cos_h, -sin_h], [sin_h, cos_h]])
    return np.array(slots) @ rot.T


def lateral_half_width(n_followers: int, c: float) -> float:
    return (n_followers // 2) * c * math.sin(WEDGE_ANGLE)


def _closest_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closest points on each segment a[w]-b[w] to each point p[...]; shape p.shape[:-1] + (W, 2)."""
    ab = b - a
    rel = p[..., None, :] - a
    s = np.clip(np.einsum("...wj,wj->...w", rel, ab) / np.einsum("wj,wj->w", ab, ab), 0.0, 1.0)
    return a + s[..., None] * ab


def _clamp_rows(v: np.ndarray, v_max: float) -> np.ndarray:
    speed = np.linalg.norm(v, axis=-1)
    scale = np.where(speed > v_max, v_max / np.where(speed > 0, speed, 1.0), 1.0)
    return v * scale[..., None]


class _Stepper:
    """Per-run precomputed geometry plus the step function."""

    def __init__(self, scenario: Scenario, profile: ImpedanceProfile, cfg: SimConfig):
        self.scenario = scenario
        self.profile = profile
        self.cfg = cfg
        obstacles = scenario.obstacles
        if obstacles and max(o.radius for o in obstacles) >= cfg.apf.rho0:
            raise ValueError("apf.rho0 must exceed every obstacle radius")
        self.ids = [o.id for o in obstacles]
        self.radii = np.array([o.radius for o in obstacles], dtype=float)
        soft = np.array([o.kind is ObstacleKind.SOFT for o in obstacles], dtype=bool)
        self.deflection_radii = np.where(soft, cfg.deflection.soft_radius, cfg.deflection.r_imp)
        self.paths = [o.path() if o.is_moving else None for o in obstacles]
        self.static_pos = np.array([o.pos for o in obstacles], dtype=float).reshape(-1, 2)
        walls = scenario.wall_segments()
        self.wall_a = np.array([a for a, _ in walls], dtype=float).reshape(-1, 2)
        self.wall_b = np.array([b for _, b in walls], dtype=float).reshape(-1, 2)
        self.goal_times = np.array([w.t for w in scenario.goal], dtype=float)
        self.goal_points = np.array([w.pos for w in scenario.goal], dtype=float)

        n = scenario.n_followers
        r = cfg.collision_radius
        self.offsets = formation_offsets(n, profile.c)
        half = lateral_half_width(n, profile.c)
        self.obstacle_inflation = np.array([half + r + PLANNING_MARGIN[o.kind] for o in obstacles], dtype=float)
        self.wall_inflation = half + r
        self.drone_link_radius = 2 * r + DRONE_LINK_MARGIN

    def obstacle_positions(self, t: float) -> np.ndarray:
        pos = self.static_pos.copy()
        for i, path in enumerate(self.paths):
            if path is not None:
                pos[i] = interpolate_path(path[0], path[1], t)
        return pos

    def goal_at(self, t: float) -> np.ndarray:
        return interpolate_path(self.goal_times, self.goal_points, t)

    def slots(self, leader: np.ndarray, heading: float) -> np.ndarray:
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        rot = np.array([[cos_h, -sin_h], [sin_h, cos_h]])
        return leader + self.offsets @ rot.T

    def initial_state(self) -> WorldState:
        s = self.scenario
        pos = np.array([s.leader_start, *s.follower_starts], dtype=float)
        to_goal = self.goal_at(0.0) - pos[0]
        heading = math.atan2(to_goal[1], to_goal[0]) if np.any(to_goal) else 0.0
        link_dx = pos[1:] - self.slots(pos[0], heading)
        return WorldState(0, 0.0, pos, np.zeros_like(pos), heading,
                          link_dx, np.zeros_like(link_dx))

    def planning_bodies(self, leader: np.ndarray, obstacles: np.ndarray, t: float) -> list[Body]:
        """
        Obstacles inflated by the formation half-width plus a per-kind margin,
        walls by the half-width alone; each shrunk to keep the leader outside.
        Followers still pass inside the deflection radius and rely on their
        slot offsets for the rest of the clearance.
        """
        bodies = []
        for i, core in enumerate(obstacles):
            dist = float(np.hypot(*(leader - core)))
            if dist <= self.radii[i]:
                raise PenetrationError(self.ids[i], tuple(leader), t)
            radius = max(self.radii[i], min(self.radii[i] + self.obstacle_inflation[i],
                                            dist - PLANNING_STANDOFF))
            bodies.append(Body.disc(self.ids[i], core, radius))
        if len(self.wall_a):
            closest = _closest_on_segments(leader, self.wall_a, self.wall_b)
            for w, core in enumerate(closest):
                dist = float(np.hypot(*(leader - core)))
                if dist <= WALL_HALF_THICKNESS:
                    raise PenetrationError(-(w + 1), tuple(leader), t)
                radius = max(WALL_HALF_THICKNESS, min(WALL_HALF_THICKNESS + self.wall_inflation,
                                                      dist - PLANNING_STANDOFF))
                bodies.append(Body.capsule(-(w + 1), self.wall_a[w], self.wall_b[w], radius))
        return bodies

    def _leader_velocity(self, state: WorldState, goal: np.ndarray, bodies: list[Body],
                         t: float) -> tuple[np.ndarray, float, float, tuple[float, ...]]:
        v_max = self.profile.v_max
        leader = state.pos[0]
        v = leader_velocity(leader, goal, bodies, self.cfg.apf, v_max)
        speed = float(np.hypot(v[0], v[1]))
        stalled = speed < STALL_SPEED_FRACTION * v_max and np.hypot(*(goal - leader)) > STALL_GOAL_DISTANCE
        stall_time = state.stall_time + self.cfg.dt if stalled else 0.0
        sign, escapes = state.escape_sign, state.escapes
        if stall_time >= STALL_TIME:
            if sign == 0.0:
                rng = np.random.default_rng([self.cfg.seed, state.step_index])
                sign = 1.0 if rng.integers(2) else -1.0
                escapes = escapes + (t,)
                logger.warning("Leader stalled at %s for %.1fs; injecting tangential escape at t=%.2fs",
                               np.round(leader, 3).tolist(), STALL_TIME, t)
            to_goal = goal - leader
            tangent = np.array([-to_goal[1], to_goal[0]]) / np.hypot(*to_goal)
            v = clamp_speed(v + sign * ESCAPE_SPEED_FRACTION * v_max * tangent, v_max)
        elif not stalled:
            sign = 0.0
        return v, stall_time, sign, escapes

    def advance(self, state: WorldState) -> WorldState:
        cfg, profile = self.cfg, self.profile
        dt = cfg.dt
        k = state.step_index + 1
        t = k * dt
        obstacles = self.obstacle_positions(t)
        goal = self.goal_at(t)
        leader = state.pos[0]

        bodies = self.planning_bodies(leader, obstacles, t)
        v_lead, stall_time, sign, escapes = self._leader_velocity(state, goal, bodies, t)
        speed = float(np.hypot(v_lead[0], v_lead[1]))
        heading = math.atan2(v_lead[1], v_lead[0]) if speed > HEADING_MIN_SPEED else state.heading

        followers = state.pos[1:]
        desired = self.slots(leader, heading)
        deflect, degenerate = self._deflections(state.pos, obstacles)
        desired = desired + deflect

        dx = followers - desired
        dv = state.vel[1:] - v_lead
        norm = np.linalg.norm(dx, axis=1, keepdims=True)
        f_ext = np.where(norm > 1e-9, -profile.F * dx / np.where(norm > 1e-9, norm, 1.0), 0.0)
        link = step_link(LinkState(dx, dv), profile, f_ext, dt)
        vel_f = _clamp_rows(v_lead + link.delta_v, profile.v_max)

        pos = np.vstack([leader + v_lead * dt, followers + vel_f * dt])
        vel = np.vstack([v_lead, vel_f])
        if not (np.isfinite(pos).all() and np.isfinite(vel).all()):
            raise SimulationError("non-finite drone state", {
                "t": t, "pos": pos.tolist(), "vel": vel.tolist(), "heading": heading})
        return WorldState(k, t, pos, vel, heading, link.delta_x, link.delta_v,
                          stall_time, sign, escapes, state.degenerate + degenerate)

    def _deflections(self, drones: np.ndarray, obstacles: np.ndarray) -> tuple[np.ndarray, int]:
        consts = self.cfg.deflection
        followers = drones[1:]
        nf, n = len(followers), len(drones)
        sources = [np.broadcast_to(obstacles, (nf,) + obstacles.shape)]
        radii = [np.broadcast_to(self.deflection_radii, (nf, len(obstacles)))]
        mags = [np.full((nf, len(obstacles)), consts.magnitude)]
        if len(self.wall_a):
            sources.append(_closest_on_segments(followers, self.wall_a, self.wall_b))
            radii.append(np.full((nf, len(self.wall_a)), consts.r_imp))
            mags.append(np.full((nf, len(self.wall_a)), consts.magnitude))
        own = np.full((nf, n), self.drone_link_radius)
        own[np.arange(nf), np.arange(1, n)] = 0.0
        sources.append(np.broadcast_to(drones, (nf, n, 2)))
        radii.append(own)
        mags.append(np.full((nf, n), consts.k_impF * self.drone_link_radius))
        return deflection_offsets(followers, np.concatenate(sources, axis=1),
                                  np.concatenate(radii, axis=1), np.concatenate(mags, axis=1),
                                  consts.magnitude)

    def goal_reached(self, state: WorldState) -> bool:
        if state.t < self.scenario.goal_end_time - 1e-9:
            return False
        return float(np.hypot(*(state.pos[0] - self.goal_at(state.t)))) <= self.cfg.goal_tol


def initial_state(scenario: Scenario, profile: ImpedanceProfile, cfg: SimConfig = SimConfig()) -> WorldState:
    return _Stepper(scenario, profile, cfg).initial_state()


def step(world: WorldState, scenario: Scenario, profile: ImpedanceProfile,
         cfg: SimConfig = SimConfig()) -> WorldState:
    return _Stepper(scenario, profile, cfg).advance(world)


# ── Trajectories and metrics ───────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Trajectories:
    t: np.ndarray          # (T,)
    pos: np.ndarray        # (T, N, 2)
    vel: np.ndarray        # (T, N, 2)
    heading: np.ndarray    # (T,)
    roles: tuple[Role, ...]
    offsets: np.ndarray    # (N-1, 2), body frame
    escapes: tuple[float, ...] = ()
    degenerate: int = 0

    @property
    def n_drones(self) -> int:
        return self.pos.shape[1]


@dataclass(frozen=True)
class SimMetrics:
    min_obstacle_clearance: float
    min_inter_drone_distance: float
    max_speed: tuple[float, ...]
    max_deflection: float
    overshoot: float
    settle_time: float
    residual_oscillation: float
    collisions: int
    goal_reach_time: float | None
    local_minimum_escapes: tuple[float, ...]
    degenerate_deflections: int
    obstacle_deflection_steps: int
    duration: float

    @property
    def goal_reached(self) -> bool:
        return self.goal_reach_time is not None

    def to_dict(self) -> dict:
        def finite(x):
            return None if x is None or math.isinf(x) else x
        return {
            "min_obstacle_clearance": finite(self.min_obstacle_clearance),
            "min_inter_drone_distance": finite(self.min_inter_drone_distance),
            "max_speed": list(self.max_speed),
            "max_deflection": self.max_deflection,
            "overshoot": self.overshoot,
            "settle_time": self.settle_time,
            "residual_oscillation": self.residual_oscillation,
            "collisions": self.collisions,
            "goal_reach_time": self.goal_reach_time,
            "local_minimum_escapes": list(self.local_minimum_escapes),
            "degenerate_deflections": self.degenerate_deflections,
            "obstacle_deflection_steps": self.obstacle_deflection_steps,
            "duration": self.duration,
        }


@dataclass(frozen=True, eq=False)
class SimResult:
    trajectories: Trajectories
    metrics: SimMetrics


def _contact_onsets(contact: np.ndarray) -> int:
    """Number of times a pair enters contact; contact is (T, pairs)."""
    if contact.size == 0:
        return 0
    return int(contact[0].sum() + (contact[1:] & ~contact[:-1]).sum())


def compute_metrics(traj: Trajectories, scenario: Scenario, cfg: SimConfig = SimConfig()) -> SimMetrics:
    t, pos, vel = traj.t, traj.pos, traj.vel
    n_steps, n = pos.shape[:2]
    r = cfg.collision_radius

    clearances = []
    deflection_steps = 0
    if scenario.obstacles:
        centres = np.stack([interpolate_path(*o.path(), t) for o in scenario.obstacles], axis=1)
        radii = np.array([o.radius for o in scenario.obstacles])
        gap = pos[:, :, None, :] - centres[:, None, :, :]
        centre_dist = np.linalg.norm(gap, axis=-1)
        clearances.append(centre_dist - radii - r)
        region = np.array([cfg.deflection.soft_radius if o.kind is ObstacleKind.SOFT else cfg.deflection.r_imp
                           for o in scenario.obstacles])
        deflection_steps = int((centre_dist[:, 1:] < region).any(axis=2).sum())
    walls = scenario.wall_segments()
    if walls:
        a = np.array([w[0] for w in walls])
        b = np.array([w[1] for w in walls])
        gap = pos[:, :, None, :] - _closest_on_segments(pos, a, b)
        clearances.append(np.linalg.norm(gap, axis=-1) - WALL_HALF_THICKNESS - r)
    if clearances:
        clear = np.concatenate(clearances, axis=2)
        min_clearance = float(clear.min())
        collisions = _contact_onsets((clear < 0.0).reshape(n_steps, -1))
    else:
        min_clearance, collisions = math.inf, 0

    first, second = np.triu_indices(n, k=1)
    if len(first):
        pair_dist = np.linalg.norm(pos[:, first] - pos[:, second], axis=-1)
        min_inter = float(pair_dist.min())
        collisions += _contact_onsets(pair_dist < 2 * r)
    else:
        min_inter = math.inf

    max_speed = tuple(float(v) for v in np.linalg.norm(vel, axis=-1).max(axis=0))

    max_deflection = overshoot = settle = residual = 0.0
    if n > 1:
        cos_h, sin_h = np.cos(traj.heading), np.sin(traj.heading)
        ox, oy = traj.offsets[:, 0], traj.offsets[:, 1]
        slot_offsets = np.stack([cos_h[:, None] * ox - sin_h[:, None] * oy,
                                 sin_h[:, None] * ox + cos_h[:, None] * oy], axis=-1)
        dev = pos[:, 1:] - (pos[:, :1] + slot_offsets)
        dist = np.linalg.norm(dev, axis=-1)
        forward = dev[..., 0] * cos_h[:, None] + dev[..., 1] * sin_h[:, None]
        lateral = dev[..., 1] * cos_h[:, None] - dev[..., 0] * sin_h[:, None]
        max_deflection = float(np.abs(lateral).max())
        overshoot = max(0.0, float(forward.max()))
        worst = dist.max(axis=1)
        outside = np.nonzero(worst > SETTLE_BAND)[0]
        settle = 0.0 if len(outside) == 0 else float(t[min(outside[-1] + 1, n_steps - 1)])
        window = t >= t[-1] - RESIDUAL_WINDOW
        residual = float(np.sqrt(np.mean(worst[window] ** 2)))

    goal = scenario.goal_at(t)
    at_goal = ((t >= scenario.goal_end_time - 1e-9)
               & (np.linalg.norm(pos[:, 0] - goal, axis=-1) <= cfg.goal_tol))
    hits = np.nonzero(at_goal)[0]
    goal_time = float(t[hits[0]]) if len(hits) else None

    return SimMetrics(
        min_obstacle_clearance=min_clearance,
        min_inter_drone_distance=min_inter,
        max_speed=max_speed,
        max_deflection=max_deflection,
        overshoot=overshoot,
        settle_time=settle,
        residual_oscillation=residual,
        collisions=collisions,
        goal_reach_time=goal_time,
        local_minimum_escapes=tuple(traj.escapes),
        degenerate_deflections=traj.degenerate,
        obstacle_deflection_steps=deflection_steps,
        duration=float(t[-1]),
    )


def run(scenario: Scenario, profile: ImpedanceProfile, cfg: SimConfig = SimConfig()) -> SimResult:
    stepper = _Stepper(scenario, profile, cfg)
    state = stepper.initial_state()
    n_steps = int(round(cfg.max_t / cfg.dt))
    n = len(state.pos)
    t = np.empty(n_steps + 1)
    pos = np.empty((n_steps + 1, n, 2))
    vel = np.empty((n_steps + 1, n, 2))
    heading = np.empty(n_steps + 1)

    def record(s: WorldState):
        i = s.step_index
        t[i], pos[i], vel[i], heading[i] = s.t, s.pos, s.vel, s.heading

    record(state)
    while state.step_index < n_steps and not stepper.goal_reached(state):
        state = stepper.advance(state)
        record(state)

    count = state.step_index + 1
    traj = Trajectories(t[:count].copy(), pos[:count].copy(), vel[:count].copy(),
                        heading[:count].copy(),
                        (Role.LEADER,) + (Role.FOLLOWER,) * (n - 1),
                        stepper.offsets.copy(), state.escapes, state.degenerate)
    metrics = compute_metrics(traj, scenario, cfg)
    logger.info("Run finished at t=%.2fs: goal %s, %d collisions, min clearance %.3f m",
                metrics.duration, "reached" if metrics.goal_reached else "not reached",
                metrics.collisions, metrics.min_obstacle_clearance)
    return SimResult(traj, metrics)


# ── Output files ───────────────────────────────────────────────────────────────

def write_trajectory_csv(traj: Trajectories, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "drone_id", "role", "x", "y", "vx", "vy"])
        for i, ti in enumerate(traj.t):
            for d in range(traj.n_drones):
                x, y = traj.pos[i, d]
                vx, vy = traj.vel[i, d]
                writer.writerow([f"{ti:.2f}", d, traj.roles[d].value,
                                 f"{x:.6f}", f"{y:.6f}", f"{vx:.6f}", f"{vy:.6f}"])


def write_metrics_json(metrics: SimMetrics, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metrics.to_dict(), f, indent=2, ensure_ascii=False)
        f.write("\n")
