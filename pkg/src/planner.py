"""
Artificial potential field guidance for the leader drone.

Quadratic attraction to the goal, inverse-distance repulsion inside rho0 of
each obstacle surface. Obstacles are discs or capsules (wall segments with a
thickness); both reduce to "closest core point + radius".
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import PenetrationError


@dataclass(frozen=True)
class ApfConfig:
    k_att: float = 1.0
    k_rep: float = 0.02
    rho0: float = 0.4
    force_cap: float = 5.0

    def __post_init__(self):
        for name in ("k_att", "k_rep", "rho0", "force_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ApfConfig.{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class Body:
    """A disc (b is None) or a capsule around the segment a-b."""
    id: int
    a: np.ndarray
    radius: float
    b: np.ndarray | None = None

    @classmethod
    def disc(cls, body_id: int, center, radius: float) -> "Body":
        return cls(body_id, np.asarray(center, dtype=float), float(radius))

    @classmethod
    def capsule(cls, body_id: int, a, b, radius: float) -> "Body":
        return cls(body_id, np.asarray(a, dtype=float), float(radius), np.asarray(b, dtype=float))

    def core_point(self, pos: np.ndarray) -> np.ndarray:
        if self.b is None:
            return self.a
        ab = self.b - self.a
        s = np.clip(np.dot(pos - self.a, ab) / np.dot(ab, ab), 0.0, 1.0)
        return self.a + s * ab

    def surface(self, pos: np.ndarray) -> tuple[float, np.ndarray]:
        """Surface distance rho and the unit vector from the surface toward pos."""
        diff = pos - self.core_point(pos)
        centre_dist = float(np.hypot(diff[0], diff[1]))
        rho = centre_dist - self.radius
        if rho <= 0.0:
            raise PenetrationError(self.id, tuple(pos))
        return rho, diff / centre_dist


def attractive_potential(pos, goal, cfg: ApfConfig) -> float:
    diff = np.asarray(pos, dtype=float) - np.asarray(goal, dtype=float)
    return 0.5 * cfg.k_att * float(np.dot(diff, diff))


def attractive_force(pos, goal, cfg: ApfConfig) -> np.ndarray:
    return cfg.k_att * (np.asarray(goal, dtype=float) - np.asarray(pos, dtype=float))


def repulsive_potential(pos, bodies: Sequence[Body], cfg: ApfConfig) -> float:
    pos = np.asarray(pos, dtype=float)
    total = 0.0
    for body in bodies:
        rho, _ = body.surface(pos)
        if rho <= cfg.rho0:
            total += 0.5 * cfg.k_rep * (1.0 / rho - 1.0 / cfg.rho0) ** 2
    return total


def repulsive_force(pos, bodies: Sequence[Body], cfg: ApfConfig) -> np.ndarray:
    pos = np.asarray(pos, dtype=float)
    force = np.zeros(2)
    for body in bodies:
        rho, away = body.surface(pos)
        if rho <= cfg.rho0:
            force += cfg.k_rep * (1.0 / rho - 1.0 / cfg.rho0) / rho ** 2 * away
    norm = float(np.hypot(force[0], force[1]))
    if norm > cfg.force_cap:
        force *= cfg.force_cap / norm
    return force


def clamp_speed(v: np.ndarray, v_max: float) -> np.ndarray:
    speed = float(np.hypot(v[0], v[1]))
    return v * (v_max / speed) if speed > v_max else v


def leader_velocity(pos, goal, bodies: Sequence[Body], cfg: ApfConfig, v_max: float) -> np.ndarray:
    if not v_max > 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    v = attractive_force(pos, goal, cfg) + repulsive_force(pos, bodies, cfg)
    return clamp_speed(v, v_max)
