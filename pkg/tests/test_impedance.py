from __future__ import annotations

import math

import numpy as np
import pytest

from errors import LinkError
from impedance import (
    DeflectionConstants,
    LinkState,
    closed_form_response,
    deflection_offsets,
    obstacle_deflection,
    step_link,
)
from retrieval import PROFILE_RANGES, ImpedanceProfile
from scene import ObstacleKind


def _profile(m, k, d, F=0.5) -> ImpedanceProfile:
    return ImpedanceProfile(m=m, k=k, d=d, F=F, c=0.3, v_max=1.0)


def _random_profiles(n: int, seed: int) -> list[ImpedanceProfile]:
    rng = np.random.default_rng(seed)
    kinds = [ObstacleKind.HARD, ObstacleKind.SOFT]
    out = []
    for i in range(n):
        r = PROFILE_RANGES[kinds[i % 2]]
        out.append(_profile(*(rng.uniform(*r[name]) for name in ("m", "k", "d", "F"))))
    return out


def _simulate(profile, f, x0, v0, dt, t_end):
    state = LinkState(np.asarray(x0, dtype=float), np.asarray(v0, dtype=float))
    xs = [state.delta_x]
    for _ in range(int(round(t_end / dt))):
        state = step_link(state, profile, f, dt)
        xs.append(state.delta_x)
    return np.array(xs)


def _max_error(profile, dt, x0=(0.05, -0.03), v0=(0.02, 0.0), t_end=5.0):
    xs = _simulate(profile, (0.0, 0.0), x0, v0, dt, t_end)
    ts = np.arange(len(xs)) * dt
    exact = np.array([closed_form_response(profile, 0.0, x0, v0, t) for t in ts])
    return float(np.abs(xs - exact).max())


# ── Link integration ───────────────────────────────────────────────────────────

def test_undamped_oscillator_half_period():
    xs = _simulate(_profile(1.0, 1.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 0.0), 1e-3, 3.142)
    np.testing.assert_allclose(xs[-1], [-1.0, 0.0], atol=5e-3)


def test_constant_force_equilibrium():
    xs = _simulate(_profile(1.2, 7.0, 4.0), (0.5, 0.0), (0.0, 0.0), (0.0, 0.0), 0.01, 20.0)
    np.testing.assert_allclose(xs[-1], [0.5 / 7.0, 0.0], atol=1e-4)


def test_step_response_overshoot_below_two_percent():
    profile = _profile(1.0, 10.0, 5.0)
    steady = 1.0 / 10.0
    ts = np.arange(0, 5.0, 1e-3)
    exact = np.array([closed_form_response(profile, (1.0, 0.0), (0, 0), (0, 0), t)[0] for t in ts])
    assert exact.max() < 1.02 * steady
    xs = _simulate(profile, (1.0, 0.0), (0.0, 0.0), (0.0, 0.0), 1e-3, 5.0)
    assert xs[:, 0].max() < 1.02 * steady


def test_matches_closed_form_and_converges_first_order():
    for profile in _random_profiles(50, seed=1):
        coarse = _max_error(profile, 0.01)
        fine = _max_error(profile, 0.005)
        assert coarse < 5e-3
        assert coarse / fine >= 1.8


def test_energy_non_increasing_without_force():
    for profile in _random_profiles(20, seed=2):
        state = LinkState(np.array([0.1, -0.05]), np.array([0.0, 0.2]))
        energy = state.energy(profile)
        for _ in range(1000):
            state = step_link(state, profile, (0.0, 0.0), 0.01)
            new = state.energy(profile)
            assert new <= energy * (1 + 1e-12) + 1e-15
            energy = new


def test_axes_are_decoupled():
    profile = _profile(1.3, 8.0, 4.0)
    a = _simulate(profile, (0.0, 0.0), (0.1, 0.0), (0.0, 0.0), 0.01, 2.0)
    b = _simulate(profile, (0.0, 0.0), (0.1, -0.3), (0.0, 0.7), 0.01, 2.0)
    np.testing.assert_array_equal(a[:, 0], b[:, 0])


def test_stacked_links_match_single_links():
    profile = _profile(5.0, 0.5, 1.5)
    stack = LinkState(np.array([[0.1, 0.0], [0.0, -0.2]]), np.zeros((2, 2)))
    f = np.array([[0.3, 0.0], [0.0, 0.1]])
    out = step_link(stack, profile, f, 0.01)
    for i in range(2):
        single = step_link(LinkState(stack.delta_x[i], stack.delta_v[i]), profile, f[i], 0.01)
        np.testing.assert_array_equal(out.delta_x[i], single.delta_x)


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.2])
def test_bad_timestep_rejected(dt):
    with pytest.raises(LinkError):
        step_link(LinkState.rest(), _profile(1.0, 8.0, 4.0), (0.0, 0.0), dt)


def test_non_finite_state_rejected():
    with pytest.raises(LinkError):
        step_link(LinkState(np.array([np.nan, 0.0]), np.zeros(2)), _profile(1.0, 8.0, 4.0), (0.0, 0.0), 0.01)


# ── Closed form ────────────────────────────────────────────────────────────────

def test_closed_form_initial_condition():
    np.testing.assert_allclose(closed_form_response(_profile(5.0, 0.5, 1.5), 0.3, (0.1, 0.2), (0, 0), 0.0),
                               [0.1, 0.2], atol=1e-15)


def test_closed_form_harmonic_oscillator():
    m, k = 2.0, 8.0
    w = math.sqrt(k / m)
    x0, v0 = np.array([0.1, -0.2]), np.array([0.3, 0.05])
    for t in (0.3, 1.7, 4.2):
        expected = x0 * math.cos(w * t) + v0 / w * math.sin(w * t)
        np.testing.assert_allclose(closed_form_response(_profile(m, k, 0.0), 0.0, x0, v0, t), expected, atol=1e-12)


def test_critical_damping_crosses_equilibrium_at_most_once():
    m, k = 1.0, 9.0
    profile = _profile(m, k, 2.0 * math.sqrt(m * k))
    xs = np.array([closed_form_response(profile, 0.0, (0.2, 0.0), (-3.0, 0.0), t)[0]
                   for t in np.linspace(0, 10, 2001)])
    signs = np.sign(xs[np.abs(xs) > 1e-12])
    assert np.count_nonzero(np.diff(signs)) <= 1


# ── Deflection ─────────────────────────────────────────────────────────────────

def test_deflection_inactive_outside_radius():
    np.testing.assert_array_equal(obstacle_deflection((0.7, 0.0), (0.0, 0.0)), [0.0, 0.0])


def test_deflection_constant_magnitude_radially_outward():
    np.testing.assert_allclose(obstacle_deflection((0.3, 0.0), (0.0, 0.0)), [0.2925, 0.0])
    np.testing.assert_allclose(obstacle_deflection((1.0, 1.6), (1.0, 2.0)), [0.0, -0.2925])


def test_deflection_rotational_equivariance():
    rng = np.random.default_rng(8)
    for _ in range(50):
        theta = rng.uniform(0, 2 * math.pi)
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        drone, obstacle = rng.uniform(-0.4, 0.4, size=(2, 2))
        offset = obstacle_deflection(drone, obstacle)
        np.testing.assert_allclose(obstacle_deflection(rot @ drone, rot @ obstacle), rot @ offset, atol=1e-12)


def test_deflection_sum_is_clamped():
    consts = DeflectionConstants()
    offsets, degenerate = deflection_offsets([[0.0, 0.0]], [[-0.2, 0.0], [0.0, -0.2]],
                                             consts.r_imp, consts.magnitude, consts.magnitude)
    assert np.linalg.norm(offsets[0]) == pytest.approx(consts.magnitude)
    np.testing.assert_allclose(offsets[0, 0], offsets[0, 1])
    assert degenerate == 0


def test_coincident_positions_use_fallback_axis():
    consts = DeflectionConstants()
    offsets, degenerate = deflection_offsets([[1.0, 1.0]], [[1.0, 1.0]],
                                             consts.r_imp, consts.magnitude, consts.magnitude)
    np.testing.assert_allclose(offsets[0], [consts.magnitude, 0.0])
    assert degenerate == 1


def test_deflection_constants_must_be_positive():
    with pytest.raises(ValueError):
        DeflectionConstants(r_imp=0.0)
    with pytest.raises(ValueError):
        DeflectionConstants(soft_scale=0.5)


def test_soft_region_is_wider_with_the_same_offset():
    consts = DeflectionConstants()
    assert consts.soft_radius == pytest.approx(0.975)
    offsets, _ = deflection_offsets([[0.8, 0.0]], [[0.0, 0.0]], consts.soft_radius,
                                    consts.magnitude, consts.magnitude)
    np.testing.assert_allclose(offsets[0], [0.2925, 0.0])
    np.testing.assert_array_equal(obstacle_deflection((0.8, 0.0), (0.0, 0.0), consts), [0.0, 0.0])
