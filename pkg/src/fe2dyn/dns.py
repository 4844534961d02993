"""Single-scale reference: the whole phase-resolved bar under the same load and time scheme.

The element kernel is the one the RVE uses, evaluated with F_bar = 1 and no
constraints, so DNS and FE² cannot drift apart through implementation details.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from fe2dyn import newmark
from fe2dyn.errors import InvertedElementError, MacroDivergenceError
from fe2dyn.fe import Mesh1D, Quadrature, assemble_banded, quadrature
from fe2dyn.macro import RunResult, StepRecord, impact_displacement
from fe2dyn.material import Law
from fe2dyn.newmark import KinematicHistory, NewmarkParams
from fe2dyn.rve import constitutive, element_arrays


@dataclass(frozen=True, eq=False)
class DnsModel:
    mesh: Mesh1D
    phases: tuple
    params: NewmarkParams
    u_max: float
    T: float
    tol: float = 1e-8
    max_iter: int = 20

    @cached_property
    def quad(self) -> Quadrature:
        return quadrature(self.mesh)

    @cached_property
    def rho_e(self) -> np.ndarray:
        return np.array([ph.rho for ph in self.phases])[self.mesh.phase_of_element]

    @cached_property
    def node_dof(self) -> np.ndarray:
        n = self.mesh.n_nodes
        dof = np.full(n, -1)
        dof[1:-1] = np.arange(n - 2)
        return dof


def _system(model: DnsModel, d: np.ndarray, hist: KinematicHistory):
    q = model.quad
    a = newmark.acceleration(d, hist, model.params)
    F = 1.0 + np.sum(q.B * d[model.mesh.elements], axis=1)[:, None] * np.ones_like(q.dV)
    acc = a[model.mesh.elements] @ q.N.T
    P, A = constitutive(model.phases, model.mesh.phase_of_element, F)
    k, m, r = element_arrays(q, model.rho_e, P, A, acc)
    return k + model.params.slope * m, r


def dns_step(model: DnsModel, hist: KinematicHistory, t: float, step_index: int):
    t0 = time.perf_counter()
    d = hist.u.copy()
    d[-1] = float(impact_displacement(t, model.u_max, model.T))
    edofs = model.node_dof[model.mesh.elements]
    n_free = model.mesh.n_nodes - 2
    keep = edofs >= 0
    deltas = []
    for _ in range(model.max_iter):
        try:
            k, r = _system(model, d, hist)
        except InvertedElementError as exc:
            raise MacroDivergenceError(f"DNS step {step_index}: {exc}", step_index, deltas) from exc
        R = np.zeros(n_free)
        np.add.at(R, edofs[keep], r[keep])
        delta = solve_banded((1, 1), assemble_banded(n_free, k, edofs), -R)
        d[1:-1] += delta
        deltas.append(float(np.linalg.norm(delta)))
        if deltas[-1] < model.tol:
            break
    else:
        raise MacroDivergenceError(f"DNS step {step_index}: Newton did not converge", step_index, deltas)
    rec = StepRecord(step_index, t, len(deltas), deltas, time.perf_counter() - t0)
    return newmark.advance(d, hist, model.params), rec


def run_dns(model: DnsModel, n_steps: int) -> RunResult:
    hist = KinematicHistory.zeros(model.mesh.n_nodes)
    result = RunResult(model.mesh.node_coords.copy(), [0.0], [hist.u.copy()])
    for n in range(1, n_steps + 1):
        try:
            hist, rec = dns_step(model, hist, n * model.params.dt, n)
        except MacroDivergenceError as exc:
            result.failure = str(exc)
            break
        result.times.append(n * model.params.dt)
        result.displacements.append(hist.u.copy())
        result.records.append(rec)
        result.completed_steps = n
    return result


def dns_energy(model: DnsModel, u: np.ndarray, v: np.ndarray) -> float:
    """Kinetic plus stored energy of a nodal state (per unit cross-section)."""
    q = model.quad
    ve = v[model.mesh.elements] @ q.N.T
    kinetic = 0.5 * np.sum(q.dV * model.rho_e[:, None] * ve**2)
    F = 1.0 + np.sum(q.B * u[model.mesh.elements], axis=1)
    E = np.array([ph.E for ph in model.phases])[model.mesh.phase_of_element]
    stvk = np.array([ph.law is Law.STVK for ph in model.phases])[model.mesh.phase_of_element]
    w = np.where(stvk, E * (F * F - 1.0) ** 2 / 8.0, E * (F - 1.0) ** 2 / 2.0)
    return float(kinetic + np.sum(w * model.mesh.lengths))


def dns_window_average(node_X, displacements, center_X: float, window: float) -> np.ndarray:
    """Spatial mean of the piecewise-linear displacement field over [center - w/2, center + w/2], per time."""
    node_X = np.asarray(node_X, dtype=float)
    lo, hi = center_X - window / 2.0, center_X + window / 2.0
    if lo < node_X[0] - 1e-9 or hi > node_X[-1] + 1e-9 or window <= 0.0:
        raise ValueError("averaging window must lie inside the bar")
    inner = node_X[(node_X > lo) & (node_X < hi)]
    xs = np.concatenate([[lo], inner, [hi]])
    U = np.atleast_2d(np.asarray(displacements, dtype=float))
    vals = np.array([np.interp(xs, node_X, row) for row in U])
    integral = np.sum((vals[:, 1:] + vals[:, :-1]) * np.diff(xs) / 2.0, axis=1)
    return integral / window
