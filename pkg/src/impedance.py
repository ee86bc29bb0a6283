"""
Virtual impedance links between drones, and the obstacle deflection law.

Each follower is tied to its formation slot by a mass-spring-damper link

    m·Δẍ + d·Δẋ + k·Δx = F_ext

integrated with semi-implicit Euler, one axis at a time. Obstacles closer than
r_imp push the slot radially outward by a fixed k_impF·r_imp, and the link
dynamics turn that shift into a smooth detour and rejoin. Soft obstacles
(people) use a wider region, r_imp·soft_scale, with the same offset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import LinkError

MAX_DT = 0.1
CRITICAL_TOL = 1e-12
FALLBACK_AXIS = np.array([1.0, 0.0])


@dataclass(frozen=True, eq=False)
class LinkState:
    delta_x: np.ndarray
    delta_v: np.ndarray

    @classmethod
    def rest(cls, delta_x=(0.0, 0.0)) -> "LinkState":
        dx = np.asarray(delta_x, dtype=float)
        return cls(dx, np.zeros_like(dx))

    def energy(self, profile) -> float:
        """½m‖Δv‖² + ½k‖Δx‖², summed over every link in the state."""
        return float(0.5 * profile.m * np.sum(self.delta_v ** 2)
                     + 0.5 * profile.k * np.sum(self.delta_x ** 2))


@dataclass(frozen=True)
class DeflectionConstants:
    r_imp: float = 0.65
    k_impF: float = 0.45
    soft_scale: float = 1.5

    def __post_init__(self):
        if not (self.r_imp > 0 and self.k_impF > 0):
            raise ValueError(f"r_imp and k_impF must be positive, got {self.r_imp}, {self.k_impF}")
        if not self.soft_scale >= 1.0:
            raise ValueError(f"soft_scale must be at least 1, got {self.soft_scale}")

    @property
    def magnitude(self) -> float:
        return self.k_impF * self.r_imp

    @property
    def soft_radius(self) -> float:
        return self.r_imp * self.soft_scale


def step_link(state: LinkState, profile, f_ext, dt: float) -> LinkState:
    """One semi-implicit Euler step. Works on a single link (2,) or a stack (n, 2)."""
    if not (0.0 < dt <= MAX_DT):
        raise LinkError(f"dt must be in (0, {MAX_DT}], got {dt}")
    dx = np.asarray(state.delta_x, dtype=float)
    dv = np.asarray(state.delta_v, dtype=float)
    f = np.asarray(f_ext, dtype=float)
    if not (np.isfinite(dx).all() and np.isfinite(dv).all() and np.isfinite(f).all()):
        raise LinkError("non-finite link state or force")
    acc = (f - profile.d * dv - profile.k * dx) / profile.m
    dv = dv + acc * dt
    dx = dx + dv * dt
    return LinkState(dx, dv)


def deflection_offsets(drone_pos, sources, radii, magnitudes, cap: float) -> tuple[np.ndarray, int]:
    """
    Summed radial setpoint offsets for each drone, clamped to `cap`.

    drone_pos: (n, 2). sources: (K, 2) shared by every drone, or (n, K, 2).
    radii, magnitudes: broadcastable to (n, K); a source is active when the
    drone is strictly inside its radius. Returns (offsets (n, 2), number of
    active sources that sat exactly on a drone and used the fallback axis).
    """
    p = np.atleast_2d(np.asarray(drone_pos, dtype=float))
    src = np.asarray(sources, dtype=float)
    if src.ndim == 2:
        src = np.broadcast_to(src, (p.shape[0],) + src.shape)
    if src.shape[1] == 0:
        return np.zeros_like(p), 0
    diff = p[:, None, :] - src
    dist = np.sqrt(np.einsum("nkj,nkj->nk", diff, diff))
    active = dist < np.asarray(radii, dtype=float)
    degenerate = active & (dist < 1e-12)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / dist[..., None]
    unit = np.where(degenerate[..., None], FALLBACK_AXIS, unit)
    mags = np.broadcast_to(np.asarray(magnitudes, dtype=float), dist.shape)
    total = np.where(active[..., None], mags[..., None] * unit, 0.0).sum(axis=1)
    norm = np.linalg.norm(total, axis=1)
    scale = np.where(norm > cap, cap / np.where(norm > 0, norm, 1.0), 1.0)
    return total * scale[:, None], int(degenerate.sum())


def obstacle_deflection(drone_pos, obstacle_pos, consts: DeflectionConstants = DeflectionConstants()) -> np.ndarray:
    offsets, _ = deflection_offsets(np.asarray(drone_pos, dtype=float)[None],
                                    np.asarray(obstacle_pos, dtype=float)[None],
                                    consts.r_imp, consts.magnitude, consts.magnitude)
    return offsets[0]


def closed_form_response(profile, f_const, x0, v0, t: float) -> np.ndarray:
    """Exact solution of m·ẍ + d·ẋ + k·x = F per axis, from (x0, v0) at time 0."""
    m, k, d = profile.m, profile.k, profile.d
    f = np.broadcast_to(np.asarray(f_const, dtype=float), (2,))
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    equilibrium = f / k
    u0 = x0 - equilibrium
    disc = d * d - 4.0 * m * k
    alpha = d / (2.0 * m)
    if abs(disc) <= CRITICAL_TOL:
        u = math.exp(-alpha * t) * (u0 + (v0 + alpha * u0) * t)
    elif disc < 0:
        wd = math.sqrt(-disc) / (2.0 * m)
        u = math.exp(-alpha * t) * (u0 * math.cos(wd * t) + (v0 + alpha * u0) / wd * math.sin(wd * t))
    else:
        s = math.sqrt(disc)
        r1, r2 = (-d + s) / (2.0 * m), (-d - s) / (2.0 * m)
        a = (v0 - r2 * u0) / (r1 - r2)
        u = a * math.exp(r1 * t) + (u0 - a) * math.exp(r2 * t)
    return equilibrium + u
