"""
Scene analyzers standing in for the vision-language model.

  ground truth  exact description computed from scenario geometry
  noisy         seeded per-obstacle miss / misclassification / position jitter,
                with presets for the two lighting conditions
  remote        HTTP client for an external analyzer service:
                POST {"image": <base64>, "prompt": <text>} -> {"description": <canonical text>}
"""
from __future__ import annotations

import base64
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from errors import (
    AnalyzerResponseError,
    AnalyzerTimeout,
    AnalyzerTransportError,
    DescriptionParseError,
)
from scene import (
    Lighting,
    ObstacleEntry,
    ObstacleKind,
    Scenario,
    SceneDescription,
    classify_spacing,
    parse_description,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0

DEFAULT_PROMPT = (
    "Analyze the drone arena image and identify all cylindrical stands or humans as obstacles "
    "in the scene. Count the total number of cylindrical stands or humans, specifying the number "
    "of obstacles before the gate and the number of obstacles after the gate. If there are no "
    "obstacles before the gate, mention that explicitly. Calculate the relative distances between "
    "each obstacle and describe their spacing as 'closely spaced' or 'widely spaced.' The spacing "
    "should be based on the distance between their feet in the image."
)

_FLIP = {ObstacleKind.SOFT: ObstacleKind.HARD, ObstacleKind.HARD: ObstacleKind.SOFT}


@dataclass(frozen=True)
class PerceptionNoise:
    p_miss: float = 0.0
    p_misclass: float = 0.0
    jitter_sigma: float = 0.0   # grid cells
    seed: int = 0

    def __post_init__(self):
        for name in ("p_miss", "p_misclass"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if not self.jitter_sigma >= 0.0:
            raise ValueError(f"jitter_sigma must be non-negative, got {self.jitter_sigma}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


ZERO_NOISE = PerceptionNoise()

# Calibrated with scripts/calibrate_presets.py against the bundled evaluation scenarios.
LIGHTING_PRESETS = {
    Lighting.OPTIMAL: PerceptionNoise(p_miss=0.05, p_misclass=0.054, jitter_sigma=0.1),
    Lighting.INADEQUATE: PerceptionNoise(p_miss=0.12, p_misclass=0.116, jitter_sigma=0.2),
}


def trial_seed(seed: int, scenario_index: int, trial: int) -> int:
    """Independent stream per (seed, scenario, trial), whatever order trials run in."""
    state = np.random.SeedSequence([seed, scenario_index, trial]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class AnalyzerOutcome:
    description: SceneDescription
    exact: bool


def same_detection(a: SceneDescription, b: SceneDescription) -> bool:
    """Counts, ordered kinds and spacing agree; grid positions are not compared."""
    return (a.before, a.after, a.kinds, a.spacing) == (b.before, b.after, b.kinds, b.spacing)


def _describe(scenario: Scenario, kinds: Sequence[ObstacleKind], points: Sequence[np.ndarray]) -> SceneDescription:
    arena, gate = scenario.arena, scenario.gate
    cells = [arena.to_cell(p) for p in points]
    before = len(points) if gate is None else sum(1 for p in points if gate.side(p) < 0.0)
    spacing = classify_spacing(cells) if len(cells) >= 2 else None
    entries = tuple(ObstacleEntry(k, c) for k, c in zip(kinds, cells))
    return SceneDescription(before, len(points) - before, entries, spacing)


def analyze_ground_truth(scenario: Scenario) -> SceneDescription:
    obstacles = sorted(scenario.obstacles, key=lambda o: o.id)
    return _describe(scenario, [o.kind for o in obstacles], [o.position_at(0.0) for o in obstacles])


def analyze_noisy(scenario: Scenario, noise: PerceptionNoise) -> AnalyzerOutcome:
    """
    Per obstacle, in id order, draw two uniforms (miss, misclassify) and two
    normals (jitter). The draws are made whether or not they are used, so one
    seed always gives the same stream.
    """
    rng = np.random.default_rng(noise.seed)
    cell = np.array(scenario.arena.cell_size)
    kinds, points = [], []
    for o in sorted(scenario.obstacles, key=lambda o: o.id):
        u = rng.random(2)
        z = rng.standard_normal(2)
        if u[0] < noise.p_miss:
            continue
        kinds.append(_FLIP[o.kind] if u[1] < noise.p_misclass else o.kind)
        points.append(o.position_at(0.0) + noise.jitter_sigma * z * cell)
    description = _describe(scenario, kinds, points)
    return AnalyzerOutcome(description, same_detection(description, analyze_ground_truth(scenario)))


def exact_rate(scenarios: Sequence[Scenario], noise: PerceptionNoise, trials: int, seed: int = 0) -> float:
    """Fraction of (scenario, trial) analyses that match ground truth."""
    hits = 0
    for idx, scenario in enumerate(scenarios):
        for trial in range(trials):
            outcome = analyze_noisy(scenario, replace(noise, seed=trial_seed(seed, idx, trial)))
            hits += outcome.exact
    return hits / (len(scenarios) * trials)


# ── Remote analyzer ────────────────────────────────────────────────────────────

def remote_analyze(endpoint: str, image_bytes: bytes, prompt_text: str = DEFAULT_PROMPT,
                   timeout: float = DEFAULT_TIMEOUT,
                   session: requests.Session | None = None,
                   grid: int | None = None) -> SceneDescription:
    """POST the image and prompt; parse the reply and, given `grid`, check every cell lies on it."""
    payload = {"image": base64.b64encode(image_bytes).decode("ascii"), "prompt": prompt_text}
    http = session or requests.Session()
    try:
        resp = http.post(endpoint, json=payload, timeout=timeout)
        resp.raise_for_status()
    except requests.Timeout as e:
        raise AnalyzerTimeout(f"no response within {timeout}s", endpoint) from e
    except requests.RequestException as e:
        raise AnalyzerTransportError(str(e), endpoint) from e
    finally:
        if session is None:
            http.close()

    raw = resp.text
    try:
        text = resp.json()["description"]
        if not isinstance(text, str):
            raise TypeError("description is not a string")
    except (ValueError, KeyError, TypeError) as e:
        raise AnalyzerResponseError("expected {\"description\": <text>}", raw, endpoint) from e
    try:
        description = parse_description(text)
    except DescriptionParseError as e:
        logger.warning("Unparseable description from %s: %r", endpoint, raw)
        e.raw = raw
        raise
    issues = description.cell_issues(grid) if grid is not None else []
    if issues:
        raise AnalyzerResponseError("; ".join(f"{field}: {msg}" for field, msg in issues), raw, endpoint)
    return description


# ── Analyzer objects ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GroundTruthAnalyzer:
    name = "ground-truth"

    def analyze(self, scenario: Scenario) -> AnalyzerOutcome:
        return AnalyzerOutcome(analyze_ground_truth(scenario), True)


@dataclass(frozen=True)
class NoisyAnalyzer:
    noise: PerceptionNoise
    name = "noisy"

    def analyze(self, scenario: Scenario) -> AnalyzerOutcome:
        return analyze_noisy(scenario, self.noise)


@dataclass(frozen=True)
class RemoteAnalyzer:
    endpoint: str
    image_path: Path
    prompt_text: str = DEFAULT_PROMPT
    timeout: float = DEFAULT_TIMEOUT
    name = "remote"

    def analyze(self, scenario: Scenario) -> AnalyzerOutcome:
        description = remote_analyze(self.endpoint, Path(self.image_path).read_bytes(),
                                     self.prompt_text, self.timeout, grid=scenario.arena.grid)
        return AnalyzerOutcome(description, same_detection(description, analyze_ground_truth(scenario)))
