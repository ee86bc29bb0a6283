"""
Build the impedance database by random search in simulation.

For each scenario, profiles are drawn uniformly from the parameter column of
its dominant obstacle kind, flown in the simulator, and scored; the best
profile is stored under the scenario's ground-truth description.

Every candidate draws from its own stream, SeedSequence([seed, scenario, sample]),
so results do not depend on evaluation order or worker count, and raising
the sample count only adds candidates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Iterable, Sequence

import numpy as np
from tqdm import tqdm

from errors import GenerationError, PenetrationError
from perception import analyze_ground_truth
from retrieval import PROFILE_FIELDS, PROFILE_RANGES, V_MAX, ImpedanceProfile, ScenarioRecord
from scene import ObstacleKind, Scenario, render_description
from swarm_sim import SimConfig, SimMetrics, SimResult, run

logger = logging.getLogger(__name__)

PROFILE_DECIMALS = 3

# Normalization scales for the score terms.
DEFLECTION_SCALE = 0.5    # m
OVERSHOOT_SCALE = 0.5     # m
CLEARANCE_SCALE = 1.0     # m
SETTLE_SCALE = 10.0       # s
RESIDUAL_SCALE = 0.1      # m


@dataclass(frozen=True)
class ScoreWeights:
    deflection: float = 1.0
    overshoot: float = 1.0
    clearance: float = 1.0
    settle: float = 1.0

    def __post_init__(self):
        values = (self.deflection, self.overshoot, self.clearance, self.settle)
        if any(not (w >= 0 and math.isfinite(w)) for w in values):
            raise ValueError(f"score weights must be finite and non-negative, got {values}")
        if not any(values):
            raise ValueError("at least one score weight must be non-zero")


@dataclass(frozen=True)
class SearchConfig:
    samples: int = 200
    seed: int = 0
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError(f"samples must be at least 1, got {self.samples}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")


@dataclass(frozen=True)
class ScoredCandidate:
    profile: ImpedanceProfile
    score: float
    metrics: SimMetrics | None


def candidate_rng(seed: int, scenario_index: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, scenario_index, sample_index]))


def sample_profile(kind: ObstacleKind, rng: np.random.Generator, dynamic: bool = False) -> ImpedanceProfile:
    """Uniform draw from the column for `kind`, rounded so stored values re-simulate exactly."""
    ranges = PROFILE_RANGES[kind]
    values = {name: round(float(rng.uniform(*ranges[name])), PROFILE_DECIMALS) for name in PROFILE_FIELDS}
    return ImpedanceProfile(**values, v_max=V_MAX[(kind, dynamic)])


def score_candidate(result: SimResult, kind: ObstacleKind, weights: ScoreWeights = ScoreWeights()) -> float:
    """
    Weighted sum of normalized metrics; -inf for runs that collide or never reach the goal.

    Soft scenes reward deflection and clearance and penalize overshoot and
    residual oscillation. Hard scenes penalize deflection, overshoot and
    settle time and reward clearance.
    """
    m = result.metrics
    if m.collisions > 0 or not m.goal_reached:
        return -math.inf
    clearance = min(m.min_obstacle_clearance, CLEARANCE_SCALE) / CLEARANCE_SCALE
    deflection = m.max_deflection / DEFLECTION_SCALE
    overshoot = m.overshoot / OVERSHOOT_SCALE
    if kind is ObstacleKind.SOFT:
        return (weights.deflection * deflection
                + weights.clearance * clearance
                - weights.overshoot * overshoot
                - weights.settle * m.residual_oscillation / RESIDUAL_SCALE)
    return (-weights.deflection * deflection
            + weights.clearance * clearance
            - weights.overshoot * overshoot
            - weights.settle * m.settle_time / SETTLE_SCALE)


# ── Search ─────────────────────────────────────────────────────────────────────

def _evaluate(task: tuple) -> ScoredCandidate:
    scenario, scenario_index, sample_index, search = task
    kind = scenario.dominant_kind
    rng = candidate_rng(search.seed, scenario_index, sample_index)
    profile = sample_profile(kind, rng, scenario.is_dynamic)
    try:
        result = run(scenario, profile, search.sim)
    except PenetrationError as e:
        logger.debug("Sample %d of scenario %d penetrated obstacle %d", sample_index, scenario_index, e.obstacle_id)
        return ScoredCandidate(profile, -math.inf, None)
    return ScoredCandidate(profile, score_candidate(result, kind, search.weights), result.metrics)


def best_candidate(candidates: Iterable[ScoredCandidate]) -> ScoredCandidate | None:
    """First candidate with the highest score; later ties never replace it."""
    best = None
    for cand in candidates:
        if best is None or cand.score > best.score:
            best = cand
    return best


def search_scenario(scenario: Scenario, scenario_index: int, search: SearchConfig) -> list[ScoredCandidate]:
    tasks = [(scenario, scenario_index, s, search) for s in range(search.samples)]
    return [_evaluate(t) for t in tasks]


def generate_database(scenarios: Sequence[tuple[str, Scenario]], search: SearchConfig = SearchConfig(),
                      progress: bool = True) -> list[ScenarioRecord]:
    """
    One record per (name, scenario), ids in input order.

    Raises GenerationError naming the first scenario for which no sampled
    profile completes the mission without collision.
    """
    if not scenarios:
        raise ValueError("generate_database needs at least one scenario")
    tasks = [(scenario, idx, s, search)
             for idx, (_, scenario) in enumerate(scenarios)
             for s in range(search.samples)]
    results: list[ScoredCandidate] = []
    with tqdm(total=len(tasks), desc="Searching profiles", unit="run", disable=not progress) as bar:
        if search.workers > 1:
            with Pool(processes=search.workers) as pool:
                for out in pool.imap(_evaluate, tasks, chunksize=4):
                    results.append(out)
                    bar.update(1)
        else:
            for task in tasks:
                results.append(_evaluate(task))
                bar.update(1)

    records = []
    for idx, (name, scenario) in enumerate(scenarios):
        chunk = results[idx * search.samples:(idx + 1) * search.samples]
        best = best_candidate(chunk)
        if best is None or best.score == -math.inf:
            raise GenerationError(name, f"all {search.samples} sampled profiles collided or missed the goal")
        text = render_description(analyze_ground_truth(scenario))
        records.append(ScenarioRecord(idx, text, best.profile, scenario.dominant_kind))
        logger.info("Scenario %s: best score %.4f from %d samples", name, best.score, search.samples)
    return records
