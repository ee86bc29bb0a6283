from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from config import SCENARIO_DIR
from dbgen import (
    ScoredCandidate,
    ScoreWeights,
    SearchConfig,
    best_candidate,
    candidate_rng,
    generate_database,
    sample_profile,
    score_candidate,
    search_scenario,
)
from errors import GenerationError
from perception import analyze_ground_truth
from retrieval import build_database, profile_issues
from scene import Obstacle, ObstacleKind, load_scenario, render_description, scenario_files
from swarm_sim import SimConfig, SimMetrics, SimResult, run

H, S = ObstacleKind.HARD, ObstacleKind.SOFT


def _metrics(**overrides) -> SimMetrics:
    base = dict(min_obstacle_clearance=0.4, min_inter_drone_distance=0.3, max_speed=(1.0, 1.0, 1.0),
                max_deflection=0.2, overshoot=0.05, settle_time=4.0, residual_oscillation=0.01,
                collisions=0, goal_reach_time=8.0, local_minimum_escapes=(),
                degenerate_deflections=0, obstacle_deflection_steps=12, duration=8.0)
    base.update(overrides)
    return SimMetrics(**base)


def _result(**overrides) -> SimResult:
    return SimResult(trajectories=None, metrics=_metrics(**overrides))


# ── Sampling ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("kind", [H, S])
def test_samples_stay_inside_their_column(kind):
    rng = np.random.default_rng(0)
    for _ in range(1000):
        profile = sample_profile(kind, rng)
        assert profile_issues(profile, kind) == []
        if kind is S:
            assert profile.k <= 0.9


def test_sample_speed_cap_follows_scene_type():
    rng = np.random.default_rng(0)
    assert sample_profile(H, rng).v_max == 1.4
    assert sample_profile(S, rng).v_max == 0.7
    assert sample_profile(H, rng, dynamic=True).v_max == 1.0
    assert sample_profile(S, rng, dynamic=True).v_max == 0.6


def test_samples_are_rounded():
    profile = sample_profile(H, np.random.default_rng(3))
    for value in (profile.m, profile.k, profile.d, profile.F, profile.c):
        assert value == round(value, 3)


def test_candidate_streams_are_independent_of_order():
    a = sample_profile(H, candidate_rng(1, 4, 7))
    sample_profile(H, candidate_rng(1, 4, 6))
    b = sample_profile(H, candidate_rng(1, 4, 7))
    assert a == b
    assert a != sample_profile(H, candidate_rng(2, 4, 7))


# ── Scoring ────────────────────────────────────────────────────────────────────

def test_collision_or_missed_goal_scores_negative_infinity():
    assert score_candidate(_result(collisions=1), H) == -math.inf
    assert score_candidate(_result(goal_reach_time=None), S) == -math.inf


def test_soft_score_rewards_deflection():
    scores = [score_candidate(_result(max_deflection=d), S) for d in (0.1, 0.2, 0.3)]
    assert scores == sorted(scores)
    assert scores[0] < scores[2]


def test_hard_score_penalizes_deflection_and_settle_time():
    by_deflection = [score_candidate(_result(max_deflection=d), H) for d in (0.1, 0.2, 0.3)]
    by_settle = [score_candidate(_result(settle_time=s), H) for s in (1.0, 3.0, 9.0)]
    assert by_deflection == sorted(by_deflection, reverse=True)
    assert by_settle == sorted(by_settle, reverse=True)


def test_clearance_reward_saturates():
    assert score_candidate(_result(min_obstacle_clearance=1.0), H) == \
        score_candidate(_result(min_obstacle_clearance=math.inf), H)


def test_weights_change_ranking():
    calm = _result(max_deflection=0.1, overshoot=0.0)
    wild = _result(max_deflection=0.4, overshoot=0.1)
    only_deflection = ScoreWeights(deflection=1.0, overshoot=0.0, clearance=0.0, settle=0.0)
    only_overshoot = ScoreWeights(deflection=0.0, overshoot=1.0, clearance=0.0, settle=0.0)
    assert score_candidate(wild, S, only_deflection) > score_candidate(calm, S, only_deflection)
    assert score_candidate(wild, S, only_overshoot) < score_candidate(calm, S, only_overshoot)


def test_weight_and_search_validation():
    with pytest.raises(ValueError):
        ScoreWeights(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ScoreWeights(deflection=-1.0)
    with pytest.raises(ValueError):
        SearchConfig(samples=0)
    with pytest.raises(ValueError):
        SearchConfig(workers=0)


def test_best_candidate_keeps_first_of_ties(hard_profile, soft_profile):
    cands = [ScoredCandidate(hard_profile, 1.0, None), ScoredCandidate(soft_profile, 1.0, None),
             ScoredCandidate(soft_profile, -math.inf, None)]
    assert best_candidate(cands).profile == hard_profile
    assert best_candidate([]) is None


# ── Search ─────────────────────────────────────────────────────────────────────

def test_more_samples_only_add_candidates(bundled):
    scenario = bundled["05_single_cylinder"]
    small = search_scenario(scenario, 4, SearchConfig(samples=2, seed=3))
    large = search_scenario(scenario, 4, SearchConfig(samples=3, seed=3))
    assert [c.profile for c in large[:2]] == [c.profile for c in small]
    assert [c.score for c in large[:2]] == [c.score for c in small]


def test_generate_single_scenario(bundled):
    scenario = bundled["05_single_cylinder"]
    records = generate_database([("05_single_cylinder", scenario)], SearchConfig(samples=2, seed=7),
                                progress=False)
    assert len(records) == 1
    record = records[0]
    assert record.id == 0
    assert record.kind is H
    assert record.text == render_description(analyze_ground_truth(scenario))
    assert profile_issues(record.profile, H) == []
    build_database(records)


def test_stored_profile_reproduces_its_search_metrics(bundled):
    scenario = bundled["05_single_cylinder"]
    search = SearchConfig(samples=3, seed=5)
    best = best_candidate(search_scenario(scenario, 0, search))
    [record] = generate_database([("05_single_cylinder", scenario)], search, progress=False)
    assert record.profile == best.profile
    assert run(scenario, record.profile, search.sim).metrics == best.metrics


def test_generation_is_reproducible(bundled):
    named = [("06_single_human", bundled["06_single_human"])]
    a = generate_database(named, SearchConfig(samples=2, seed=7), progress=False)
    b = generate_database(named, SearchConfig(samples=2, seed=7), progress=False)
    assert a == b


def test_unsolvable_scenario_raises(bundled):
    scenario = bundled["05_single_cylinder"]
    blocked = replace(scenario, obstacles=(Obstacle(0, H, scenario.leader_start, 0.15),))
    with pytest.raises(GenerationError) as exc:
        generate_database([("blocked", blocked)], SearchConfig(samples=2), progress=False)
    assert exc.value.scenario == "blocked"


def test_empty_scenario_list_rejected():
    with pytest.raises(ValueError):
        generate_database([], progress=False)


@pytest.mark.slow
def test_full_catalog_search_respects_columns():
    paths = scenario_files(SCENARIO_DIR)
    named = [(str(p.relative_to(SCENARIO_DIR)), load_scenario(p)) for p in paths]
    records = generate_database(named, SearchConfig(samples=200, seed=1, workers=4, sim=SimConfig()),
                                progress=False)
    assert len(records) == len(named) == 40
    for record, (_, scenario) in zip(records, named):
        assert profile_issues(record.profile, scenario.dominant_kind) == []
    build_database(records)
