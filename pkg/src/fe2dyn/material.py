"""Finite-strain 1D constitutive laws.

Units are mm, N and s throughout, which makes the mass unit the tonne
(N s^2 / mm). Densities given in kg/m^3 are converted once with
``KG_PER_M3``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from fe2dyn.errors import ConfigError, InvertedElementError

KG_PER_M3 = 1e-12  # t/mm^3


class Law(str, Enum):
    STVK = "stvk"
    LINEAR = "linear"


@dataclass(frozen=True)
class MaterialPhase:
    """One microstructural constituent. ``rho`` is stored in t/mm^3."""

    E: float
    rho: float
    law: Law = Law.STVK

    def __post_init__(self):
        object.__setattr__(self, "law", Law(self.law))
        if not self.E > 0.0:
            raise ConfigError(f"Young's modulus must be positive, got {self.E}")
        if not self.rho >= 0.0:
            raise ConfigError(f"density must be non-negative, got {self.rho}")

    @classmethod
    def from_kg_m3(cls, E: float, rho_kg_m3: float, law: Law | str = Law.STVK) -> MaterialPhase:
        return cls(E, rho_kg_m3 * KG_PER_M3, Law(law))


def _check(F):
    F = np.asarray(F, dtype=float)
    if np.any(F <= 0.0):
        raise InvertedElementError(f"deformation gradient {np.min(F):.6g} <= 0")
    return F


def stress(phase: MaterialPhase, F):
    """First Piola-Kirchhoff stress P(F)."""
    F = _check(F)
    if phase.law is Law.STVK:
        return phase.E * F * (F * F - 1.0) / 2.0
    return phase.E * (F - 1.0)


def tangent(phase: MaterialPhase, F):
    """dP/dF."""
    F = _check(F)
    if phase.law is Law.STVK:
        return phase.E * (3.0 * F * F - 1.0) / 2.0
    return np.full_like(F, phase.E)
