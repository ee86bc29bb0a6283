from __future__ import annotations

import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from errors import PenetrationError
from scene import Obstacle, ObstacleKind, Waypoint
from swarm_sim import (
    Role,
    SimConfig,
    Trajectories,
    compute_metrics,
    formation_offsets,
    initial_state,
    run,
    step,
    write_metrics_json,
    write_trajectory_csv,
)

BUNDLED_IDS = {
    "01_static_hard_gate": 0,
    "02_static_soft_gate": 1,
    "03_dynamic_hard_moving_goal": 2,
    "04_dynamic_soft_walker": 3,
    "05_single_cylinder": 4,
    "06_single_human": 5,
    "07_mixed_wide_formation": 6,
}


@pytest.fixture(scope="module")
def bundled_runs(bundled, db):
    return {name: run(bundled[name], db[idx].profile) for name, idx in BUNDLED_IDS.items()}


def _empty(scenario):
    return replace(scenario, obstacles=(), gate=None)


def _on_slots(scenario, profile):
    start = np.asarray(scenario.leader_start, dtype=float)
    slots = start + formation_offsets(scenario.n_followers, profile.c)
    return replace(scenario, follower_starts=tuple((float(x), float(y)) for x, y in slots))


def _slot_deviation(traj):
    cos_h, sin_h = np.cos(traj.heading), np.sin(traj.heading)
    ox, oy = traj.offsets[:, 0], traj.offsets[:, 1]
    slots = np.stack([cos_h[:, None] * ox - sin_h[:, None] * oy,
                      sin_h[:, None] * ox + cos_h[:, None] * oy], axis=-1)
    return np.linalg.norm(traj.pos[:, 1:] - (traj.pos[:, :1] + slots), axis=-1).max(axis=1)


# ── Formation ──────────────────────────────────────────────────────────────────

def test_two_follower_wedge():
    offsets = formation_offsets(2, 0.5)
    np.testing.assert_allclose(np.linalg.norm(offsets, axis=1), [0.5, 0.5])
    np.testing.assert_allclose(offsets[0], offsets[1] * [1, -1])
    assert (offsets[:, 0] < 0).all()


def test_four_follower_wedge_ranks():
    offsets = formation_offsets(4, 0.3)
    assert np.linalg.norm(offsets, axis=1).max() == pytest.approx(0.6)
    pair = np.linalg.norm(offsets[:, None] - offsets[None], axis=-1)
    assert pair[np.triu_indices(4, k=1)].min() >= 0.3 - 1e-12


def test_formation_rotates_with_heading():
    np.testing.assert_allclose(formation_offsets(2, 0.5, math.pi / 2),
                               formation_offsets(2, 0.5) @ np.array([[0, 1], [-1, 0]]), atol=1e-12)


def test_unsupported_follower_count():
    with pytest.raises(ValueError):
        formation_offsets(3, 0.5)


# ── Stepping ───────────────────────────────────────────────────────────────────

def test_zero_duration_returns_initial_state(bundled, hard_profile):
    scenario = bundled["05_single_cylinder"]
    result = run(scenario, hard_profile, SimConfig(max_t=0.0))
    assert len(result.trajectories.t) == 1
    start = initial_state(scenario, hard_profile)
    np.testing.assert_array_equal(result.trajectories.pos[0], start.pos)


def test_step_advances_time_and_leader(bundled, hard_profile):
    scenario = bundled["05_single_cylinder"]
    world = initial_state(scenario, hard_profile)
    nxt = step(world, scenario, hard_profile)
    assert nxt.step_index == 1
    assert nxt.t == pytest.approx(0.01)
    assert nxt.pos[0, 0] > world.pos[0, 0]
    assert [d.role for d in nxt.drones] == [Role.LEADER, Role.FOLLOWER, Role.FOLLOWER]
    assert nxt.drones[0].link is None and nxt.drones[1].link is not None


def test_obstacle_on_leader_start_raises(bundled, hard_profile):
    scenario = bundled["05_single_cylinder"]
    blocker = Obstacle(0, ObstacleKind.HARD, scenario.leader_start, 0.15)
    with pytest.raises(PenetrationError):
        run(replace(scenario, obstacles=(blocker,)), hard_profile)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.5)
    with pytest.raises(ValueError):
        SimConfig(max_t=-1.0)


# ── Runs ───────────────────────────────────────────────────────────────────────

def test_leader_speed_reaches_profile_cap(bundled_runs):
    expected = {"01_static_hard_gate": 1.4, "02_static_soft_gate": 0.7,
                "03_dynamic_hard_moving_goal": 1.0, "04_dynamic_soft_walker": 0.6}
    for name, cap in expected.items():
        assert bundled_runs[name].metrics.max_speed[0] == pytest.approx(cap, abs=1e-6)
    ratio = bundled_runs["01_static_hard_gate"].metrics.max_speed[0] / \
        bundled_runs["02_static_soft_gate"].metrics.max_speed[0]
    assert ratio >= 1.6


def test_bundled_scenarios_are_safe(bundled_runs, db):
    for name, result in bundled_runs.items():
        m = result.metrics
        assert m.collisions == 0, name
        assert m.goal_reached, name
        assert m.min_obstacle_clearance > 0.05, name
        v_max = db[BUNDLED_IDS[name]].profile.v_max
        assert max(m.max_speed) <= v_max + 1e-9, name


def test_soft_profile_keeps_wider_berth(bundled_runs):
    soft = bundled_runs["06_single_human"].metrics.min_obstacle_clearance
    hard = bundled_runs["05_single_cylinder"].metrics.min_obstacle_clearance
    assert soft > hard


def test_soft_profile_deflects_more_and_settles_slower(bundled, hard_profile, soft_profile):
    scenario = bundled["05_single_cylinder"]
    hard = run(_on_slots(scenario, hard_profile), hard_profile).metrics
    soft = run(_on_slots(scenario, soft_profile), soft_profile).metrics
    assert soft.max_deflection > hard.max_deflection
    assert hard.settle_time < soft.settle_time


def test_lag_alone_is_not_lateral_deflection(bundled, hard_profile, soft_profile):
    scenario = _empty(bundled["05_single_cylinder"])
    hard = run(_on_slots(scenario, hard_profile), hard_profile)
    soft = run(_on_slots(scenario, soft_profile), soft_profile)
    assert _slot_deviation(soft.trajectories).max() > 0.3
    assert hard.metrics.max_deflection == pytest.approx(0.0, abs=1e-9)
    assert soft.metrics.max_deflection == pytest.approx(0.0, abs=1e-9)
    assert hard.metrics.obstacle_deflection_steps == soft.metrics.obstacle_deflection_steps == 0


@pytest.mark.parametrize("name", ["05_single_cylinder", "06_single_human"])
def test_followers_pass_through_the_deflection_region(bundled_runs, name):
    assert bundled_runs[name].metrics.obstacle_deflection_steps > 0


def test_followers_rejoin_after_obstacle(bundled_runs):
    result = bundled_runs["05_single_cylinder"]
    deviation = _slot_deviation(result.trajectories)
    assert result.metrics.max_deflection > 0
    assert deviation[-1] < 0.5 * deviation.max()


def test_followers_converge_without_obstacles(bundled, hard_profile):
    result = run(_empty(bundled["05_single_cylinder"]), hard_profile, SimConfig(max_t=12.0))
    assert _slot_deviation(result.trajectories)[-1] < hard_profile.c / 10


def test_moving_goal_is_tracked_to_its_end(bundled_runs, bundled):
    scenario = bundled["03_dynamic_hard_moving_goal"]
    m = bundled_runs["03_dynamic_hard_moving_goal"].metrics
    assert m.goal_reach_time >= scenario.goal_end_time


def test_run_is_deterministic(bundled, soft_profile):
    scenario = bundled["04_dynamic_soft_walker"]
    a = run(scenario, soft_profile, SimConfig(max_t=10.0))
    b = run(scenario, soft_profile, SimConfig(max_t=10.0))
    np.testing.assert_array_equal(a.trajectories.pos, b.trajectories.pos)
    assert a.metrics == b.metrics


def test_metrics_recompute_from_trajectories(bundled_runs, bundled):
    for name, result in bundled_runs.items():
        assert compute_metrics(result.trajectories, bundled[name]) == result.metrics


# ── Metrics on hand-built trajectories ─────────────────────────────────────────

def _traj(pos, vel):
    pos, vel = np.asarray(pos, dtype=float), np.asarray(vel, dtype=float)
    n_steps, n = pos.shape[:2]
    return Trajectories(np.arange(n_steps) * 0.01, pos, vel, np.zeros(n_steps),
                        (Role.LEADER,) + (Role.FOLLOWER,) * (n - 1), np.zeros((n - 1, 2)))


def test_single_stationary_drone(bundled):
    m = compute_metrics(_traj([[[0.5, 0.5]]] * 10, [[[0.0, 0.0]]] * 10), bundled["05_single_cylinder"])
    assert m.max_speed == (0.0,)
    assert m.collisions == 0
    assert m.min_inter_drone_distance == math.inf


def test_crossing_drones_collide(bundled):
    xs = np.linspace(0.5, 1.5, 11)
    pos = np.stack([np.stack([xs, np.full(11, 1.0)], axis=1),
                    np.stack([np.full(11, 1.0), xs], axis=1)], axis=1)
    m = compute_metrics(_traj(pos, np.zeros_like(pos)), _empty(bundled["05_single_cylinder"]))
    assert m.collisions >= 1
    assert m.min_inter_drone_distance == pytest.approx(0.0)


def test_deflection_counts_only_the_lateral_part(bundled):
    scenario = _empty(bundled["05_single_cylinder"])
    behind = _traj([[[1.0, 1.0], [0.6, 1.0]]] * 3, np.zeros((3, 2, 2)))
    beside = _traj([[[1.0, 1.0], [1.0, 1.2]]] * 3, np.zeros((3, 2, 2)))
    assert compute_metrics(behind, scenario).max_deflection == 0.0
    assert compute_metrics(beside, scenario).max_deflection == pytest.approx(0.2)


def test_deflection_region_is_wider_around_people(bundled):
    hard = bundled["05_single_cylinder"]
    soft = bundled["06_single_human"]
    centre = np.asarray(hard.obstacles[0].pos)
    near = _traj([[[0.5, 0.5], centre + [0.5, 0.0]]] * 3, np.zeros((3, 2, 2)))
    farther = _traj([[[0.5, 0.5], centre + [0.8, 0.0]]] * 3, np.zeros((3, 2, 2)))
    assert compute_metrics(near, hard).obstacle_deflection_steps == 3
    assert compute_metrics(farther, hard).obstacle_deflection_steps == 0
    assert compute_metrics(farther, soft).obstacle_deflection_steps == 3


def test_drone_inside_obstacle_counts_as_collision(bundled):
    scenario = bundled["05_single_cylinder"]
    m = compute_metrics(_traj([[scenario.obstacles[0].pos]] * 3, [[[0.0, 0.0]]] * 3), scenario)
    assert m.collisions == 1
    assert m.min_obstacle_clearance < 0


# ── Output files ───────────────────────────────────────────────────────────────

def test_output_writers(bundled_runs, tmp_path):
    result = bundled_runs["05_single_cylinder"]
    write_trajectory_csv(result.trajectories, tmp_path / "out" / "trajectory.csv")
    write_metrics_json(result.metrics, tmp_path / "out" / "metrics.json")

    with open(tmp_path / "out" / "trajectory.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["t", "drone_id", "role", "x", "y", "vx", "vy"]
    assert len(rows) == len(result.trajectories.t) * 3
    assert {r["role"] for r in rows} == {"leader", "follower"}

    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text(encoding="utf-8"))
    assert metrics["collisions"] == 0
    assert metrics["goal_reach_time"] == result.metrics.goal_reach_time


def test_motion_script_shifts_obstacle_over_time(bundled, soft_profile):
    scenario = bundled["06_single_human"]
    walker = replace(scenario.obstacles[0], pos=(2.73, 5.0),
                     motion=(Waypoint(0.0, (2.73, 5.0)), Waypoint(20.0, (2.73, 5.5))))
    result = run(replace(scenario, obstacles=(walker,)), soft_profile, SimConfig(max_t=5.0))
    assert result.metrics.collisions == 0
