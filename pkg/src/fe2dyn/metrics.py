"""Comparison measures between displacement histories and solver diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidComparisonError(ValueError):
    pass


@dataclass
class FieldSeries:
    """Nodal displacement history, one row per time instant."""

    times: np.ndarray
    node_X: np.ndarray
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.node_X = np.asarray(self.node_X, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape != (self.times.size, self.node_X.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.times.size} times x {self.node_X.size} nodes"
            )
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def from_run(cls, run, source: str) -> FieldSeries:
        return cls(np.array(run.times), run.node_X, np.array(run.displacements), source)


def resample(series: FieldSeries, node_X) -> FieldSeries:
    """Linear interpolation onto other nodes; exact for FE fields."""
    node_X = np.asarray(node_X, dtype=float)
    lo, hi = series.node_X[0], series.node_X[-1]
    tol = 1e-9 * max(1.0, abs(hi - lo))
    if node_X[0] < lo - tol or node_X[-1] > hi + tol:
        raise InvalidComparisonError("target nodes leave the spatial support of the series")
    vals = np.array([np.interp(node_X, series.node_X, row) for row in series.values])
    return FieldSeries(series.times, node_X, vals, series.source)


def _aligned(a: FieldSeries, b: FieldSeries):
    if a.node_X[-1] < b.node_X[0] or b.node_X[-1] < a.node_X[0]:
        raise InvalidComparisonError("series have disjoint spatial supports")
    if a.node_X.shape != b.node_X.shape or not np.allclose(a.node_X, b.node_X, rtol=0, atol=1e-9):
        b = resample(b, a.node_X)
    ia, ib = [], []
    j = 0
    for i, t in enumerate(a.times):
        while j < b.times.size and b.times[j] < t - 1e-12 * max(1.0, abs(t)):
            j += 1
        if j < b.times.size and abs(b.times[j] - t) <= 1e-12 * max(1.0, abs(t)):
            ia.append(i)
            ib.append(j)
    if not ia:
        raise InvalidComparisonError("series share no time instants")
    return a.values[ia], b.values[ib], a.times[ia]


def epsilon(a: FieldSeries, b: FieldSeries, t_index: int) -> float:
    """Mean absolute nodal difference at one instant of ``a``; ``b`` is resampled onto a's nodes."""
    va, vb, _ = _aligned(
        FieldSeries(a.times[[t_index]], a.node_X, a.values[[t_index]]), b
    )
    return float(np.mean(np.abs(va[0] - vb[0])))


def epsilon_series(a: FieldSeries, b: FieldSeries):
    """(times, epsilon) over the time instants both series share."""
    va, vb, t = _aligned(a, b)
    return t, np.mean(np.abs(va - vb), axis=1)


def epsilon_time(a: FieldSeries, b: FieldSeries, skip_initial: bool = True) -> float:
    """Average of epsilon over the shared time steps, by default excluding t = 0."""
    t, eps = epsilon_series(a, b)
    if skip_initial and t.size > 1 and t[0] == 0.0:
        eps = eps[1:]
    return float(np.mean(eps))


def convergence_order(residuals, floor: float = 0.0, n_pairs: int = 3) -> float | None:
    """Least-squares slope of log r_{k+1} against log r_k over the last ``n_pairs`` pairs.

    Entries at or below ``floor`` are treated as round-off and end the sequence.
    Returns None when fewer than three usable entries remain or the tail does
    not decrease.
    """
    r = []
    for x in residuals:
        if not x > floor:
            break
        r.append(float(x))
    if len(r) < 3:
        return None
    tail = np.log(np.array(r[-(n_pairs + 1):]))
    if np.any(np.diff(tail) >= 0.0):
        return None
    x, y = tail[:-1], tail[1:]
    return float(np.polyfit(x, y, 1)[0])


def roundoff_floor(displacements, ulps: float = 100.0) -> float:
    """Update size indistinguishable from round-off for a given displacement field."""
    return ulps * np.finfo(float).eps * max(1.0, float(np.max(np.abs(displacements))))


@dataclass(frozen=True)
class RunOutcome:
    unit_cell: str
    n_cells: int
    constraint: str
    completed_steps: int
    failed: bool = False


def robustness_tally(outcomes) -> dict:
    """{(unit_cell, constraint): {n_cells: completed_steps}}, the shape of a robustness table."""
    table: dict = {}
    for o in outcomes:
        table.setdefault((o.unit_cell, o.constraint), {})[o.n_cells] = o.completed_steps
    return table


def tally_markdown(table: dict) -> str:
    cells = sorted({n for row in table.values() for n in row})
    lines = [
        "| unit cell | u-link | " + " | ".join(str(n) for n in cells) + " |",
        "|---|---|" + "---|" * len(cells),
    ]
    for (cell, constraint), row in sorted(table.items()):
        vals = " | ".join(str(row.get(n, "")) for n in cells)
        lines.append(f"| {cell} | {constraint} | {vals} |")
    return "\n".join(lines)


def normalized_micro(u, u_bar, u_max: float, guard: float = 1e-9):
    """u / u_bar with instants where |u_bar| < guard * u_max masked out (NaN)."""
    u = np.asarray(u, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    ok = np.abs(u_bar) >= guard * u_max
    shape = (-1,) + (1,) * (u.ndim - 1)
    out = np.full_like(u, np.nan)
    out[ok] = u[ok] / u_bar.reshape(shape)[ok] if u.ndim == 1 else (u / u_bar.reshape(shape))[ok]
    return out
