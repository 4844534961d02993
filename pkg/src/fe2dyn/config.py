"""Scenario files: a YAML mapping with a fixed key schema.

Lengths are in mm, moduli in N/mm^2, densities in kg/m^3 (converted on load),
times in s. Unknown keys are rejected so that typos cannot silently fall back
to defaults. The time step has no default.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from fe2dyn.errors import ConfigError
from fe2dyn.material import Law, MaterialPhase
from fe2dyn.newmark import NewmarkParams
from fe2dyn.rve import ConstraintMode, FLink

log = logging.getLogger(__name__)

_REQUIRED = object()


@dataclass(frozen=True)
class Geometry:
    L: float
    l_M: float
    l_macro_E: float
    l_E: float | None = None

    def __post_init__(self):
        if self.l_E is None:
            object.__setattr__(self, "l_E", self.l_M / 20.0)
        for name in ("L", "l_M", "l_macro_E", "l_E"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0.0:
                raise ConfigError(f"geometry.{name} must be a positive length in mm, got {v!r}")
        n = self.L / self.l_macro_E
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"geometry.L = {self.L} is not a multiple of l_macro_E = {self.l_macro_E}")

    @property
    def n_macro_elements(self) -> int:
        return int(round(self.L / self.l_macro_E))


@dataclass(frozen=True)
class Phases:
    E1: float = 2e3
    E2: float = 2e5
    rho1: float = 1e3
    rho2: float = 1e5
    law: str = "stvk"

    def __post_init__(self):
        try:
            Law(self.law)
        except ValueError:
            raise ConfigError(f"phases.law must be one of {[x.value for x in Law]}, got {self.law!r}") from None

    def materials(self) -> tuple:
        """(soft, stiff) with densities converted to t/mm^3."""
        return (
            MaterialPhase.from_kg_m3(self.E1, self.rho1, self.law),
            MaterialPhase.from_kg_m3(self.E2, self.rho2, self.law),
        )


@dataclass(frozen=True)
class Load:
    u_max: float
    T: float

    def __post_init__(self):
        if not self.T > 0.0:
            raise ConfigError(f"load.T must be positive, got {self.T!r}")


@dataclass(frozen=True)
class Time:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not isinstance(self.dt, (int, float)) or not self.dt > 0.0:
            raise ConfigError(f"time.dt must be positive, got {self.dt!r}")
        if not isinstance(self.n_steps, int) or self.n_steps < 1:
            raise ConfigError(f"time.n_steps must be an integer >= 1, got {self.n_steps!r}")


@dataclass(frozen=True)
class Rve:
    unit_cell: str = "A"
    n_cells: int = 1
    constraint: str = "volume"
    f_link: str = "periodic"

    def __post_init__(self):
        if self.unit_cell not in ("A", "B"):
            raise ConfigError(f"rve.unit_cell must be A or B, got {self.unit_cell!r}")
        if not isinstance(self.n_cells, int) or self.n_cells < 1:
            raise ConfigError(f"rve.n_cells must be an integer >= 1, got {self.n_cells!r}")
        for name, enum in (("constraint", ConstraintMode), ("f_link", FLink)):
            try:
                enum(getattr(self, name))
            except ValueError:
                raise ConfigError(
                    f"rve.{name} must be one of {[x.value for x in enum]}, got {getattr(self, name)!r}"
                ) from None
        if self.constraint == "fixed_corners" and self.f_link == "volume_avg":
            raise ConfigError("rve.constraint fixed_corners cannot be combined with f_link volume_avg")


@dataclass(frozen=True)
class Newmark:
    beta: float = 0.25
    gamma: float = 0.5


@dataclass(frozen=True)
class Outputs:
    snapshot_times: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)
    probe_X: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: Geometry
    load: Load
    time: Time
    phases: Phases = field(default_factory=Phases)
    rve: Rve = field(default_factory=Rve)
    newmark: Newmark = field(default_factory=Newmark)
    outputs: Outputs = field(default_factory=Outputs)
    name: str = "scenario"

    def __post_init__(self):
        NewmarkParams(self.time.dt, self.newmark.beta, self.newmark.gamma)
        if self.rve_length > self.geometry.l_macro_E:
            log.warning(
                "RVE length %.6g mm exceeds the macro element length %.6g mm; "
                "scale separation is violated",
                self.rve_length,
                self.geometry.l_macro_E,
            )
        if self.outputs.probe_X is not None and not 0.0 <= self.outputs.probe_X <= self.geometry.L:
            raise ConfigError("outputs.probe_X must lie on the bar")

    @property
    def rve_length(self) -> float:
        return 2.0 * self.geometry.l_M * self.rve.n_cells

    @property
    def scale_separated(self) -> bool:
        return self.rve_length <= self.geometry.l_macro_E

    @property
    def newmark_params(self) -> NewmarkParams:
        return NewmarkParams(self.time.dt, self.newmark.beta, self.newmark.gamma)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> ScenarioConfig:
        """Copy with whole sections or fields of sections swapped, e.g. ``rve={"n_cells": 3}``."""
        kw = {}
        for key, value in sections.items():
            current = getattr(self, key)
            kw[key] = dataclasses.replace(current, **value) if isinstance(value, dict) else value
        return dataclasses.replace(self, **kw)


_SECTIONS = {
    "geometry": Geometry,
    "phases": Phases,
    "load": Load,
    "time": Time,
    "rve": Rve,
    "newmark": Newmark,
    "outputs": Outputs,
}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = [
        f.name
        for f in dataclasses.fields(cls)
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING and f.name not in raw
    ]
    if missing:
        raise ConfigError(f"missing required key(s) in {where}: {', '.join(missing)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict, name: str = "scenario") -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must contain a mapping at top level")
    raw = dict(raw)
    name = raw.pop("name", name)
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for required in ("geometry", "load", "time"):
        if required not in raw:
            raise ConfigError(f"missing required section {required!r}")
    sections = {key: _build(cls, raw[key], key) for key, cls in _SECTIONS.items() if key in raw}
    return ScenarioConfig(name=str(name), **sections)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(raw, name=path.stem)
    log.info("scenario %s: %s", cfg.name, cfg.to_dict())
    return cfg
