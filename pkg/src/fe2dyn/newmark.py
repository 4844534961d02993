"""Implicit Newmark-beta relations.

The acceleration is written as a_next = (u_next - h_n) / (beta dt^2) with the
history term h_n = u_n + dt v_n + dt^2 (1/2 - beta) a_n, so that
d a_next / d u_next = alpha1 / dt^2 with alpha1 = 1 / beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fe2dyn.errors import ConfigError


@dataclass(frozen=True)
class NewmarkParams:
    dt: float
    beta: float = 0.25
    gamma: float = 0.5

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not 0.0 < self.beta <= 0.5:
            raise ConfigError(f"beta must lie in (0, 0.5], got {self.beta}")
        if not 0.5 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0.5, 1], got {self.gamma}")

    @property
    def alpha1(self) -> float:
        return 1.0 / self.beta

    @property
    def slope(self) -> float:
        """alpha1 / dt^2, the derivative of the acceleration w.r.t. the displacement."""
        return self.alpha1 / self.dt**2


@dataclass
class KinematicHistory:
    """Displacement, velocity and acceleration at the last converged step."""

    u: np.ndarray
    v: np.ndarray
    a: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> KinematicHistory:
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def copy(self) -> KinematicHistory:
        return KinematicHistory(self.u.copy(), self.v.copy(), self.a.copy())


def history_term(hist: KinematicHistory, p: NewmarkParams):
    return hist.u + p.dt * hist.v + p.dt**2 * (0.5 - p.beta) * hist.a


def acceleration(u_next, hist: KinematicHistory, p: NewmarkParams):
    return (np.asarray(u_next) - history_term(hist, p)) / (p.beta * p.dt**2)


def velocity(a_next, hist: KinematicHistory, p: NewmarkParams):
    return hist.v + p.dt * ((1.0 - p.gamma) * hist.a + p.gamma * np.asarray(a_next))


def advance(u_next, hist: KinematicHistory, p: NewmarkParams) -> KinematicHistory:
    """History of the next step once ``u_next`` has converged."""
    u_next = np.array(u_next, dtype=float)
    a_next = acceleration(u_next, hist, p)
    return KinematicHistory(u_next, velocity(a_next, hist, p), a_next)
