"""Macroscale FE² solver: Newmark time stepping with one RVE per Gauss point.

The bar is fixed at X = 0 and driven by a prescribed displacement pulse at
X = L. Within a step every Newton iteration re-solves all RVEs, homogenizes
them and solves the (non-symmetric) tridiagonal macro system.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from fe2dyn import newmark
from fe2dyn import rve as rve_mod
from fe2dyn.errors import IllPosedError, MacroDivergenceError, MicroDivergenceError
from fe2dyn.fe import ElementBasis, Mesh1D, Quadrature, assemble_banded, quadrature
from fe2dyn.homogenize import TangentSet, homogenize
from fe2dyn.newmark import KinematicHistory, NewmarkParams
from fe2dyn.rve import MicroLoad, RveModel, RveState


def impact_displacement(t, u_max: float, T: float):
    """Smooth pulse 2^8 u_max / T^8 t^4 (t - T)^4 on [0, T], zero afterwards."""
    t = np.asarray(t, dtype=float)
    u = 2.0**8 * u_max / T**8 * t**4 * (t - T) ** 4
    return np.where((t >= 0.0) & (t <= T), u, 0.0)


@dataclass(frozen=True, eq=False)
class MacroModel:
    mesh: Mesh1D
    params: NewmarkParams
    rve_template: RveModel
    u_max: float
    T: float
    tol: float = 1e-8
    max_iter: int = 20
    # micro solves start from the previous macro iteration ("iteration") or the last committed step ("step")
    warm_start: str = "iteration"

    def __post_init__(self):
        if self.warm_start not in ("iteration", "step"):
            raise ValueError(f"warm_start must be 'iteration' or 'step', got {self.warm_start!r}")

    @cached_property
    def quad(self) -> Quadrature:
        return quadrature(self.mesh)

    @property
    def n_gp(self) -> int:
        return self.quad.dV.size

    @cached_property
    def node_dof(self) -> np.ndarray:
        n = self.mesh.n_nodes
        dof = np.full(n, -1)
        dof[1:-1] = np.arange(n - 2)
        return dof

    def prescribed(self, t: float) -> float:
        return float(impact_displacement(t, self.u_max, self.T))


@dataclass
class MacroState:
    step: int
    time: float
    hist: KinematicHistory
    H_hist: KinematicHistory
    rves: list

    @property
    def u(self) -> np.ndarray:
        return self.hist.u


@dataclass
class StepRecord:
    step: int
    time: float
    iterations: int
    deltas: list
    wall_time: float
    micro_iterations: int = 0
    max_mean_fluct: float = 0.0
    max_F_gap: float = 0.0


@dataclass
class GpKinematics:
    F_bar: np.ndarray
    F_bar_ddot: np.ndarray
    u_bar_ddot: np.ndarray
    u_bar: np.ndarray


def initial_state(model: MacroModel) -> MacroState:
    tmpl = model.rve_template
    return MacroState(
        0,
        0.0,
        KinematicHistory.zeros(model.mesh.n_nodes),
        KinematicHistory.zeros(model.n_gp),
        [rve_mod.initial_state(tmpl) for _ in range(model.n_gp)],
    )


def macro_gp_kinematics(model: MacroModel, d: np.ndarray, state: MacroState) -> GpKinematics:
    """Per-GP F_bar, F_bar_ddot, u_bar_ddot, u_bar, flattened element-major."""
    q = model.quad
    de = d[model.mesh.elements]
    H = (np.sum(q.B * de, axis=1)[:, None] * np.ones_like(q.dV)).ravel()
    a = newmark.acceleration(d, state.hist, model.params)
    return GpKinematics(
        F_bar=1.0 + H,
        F_bar_ddot=newmark.acceleration(H, state.H_hist, model.params),
        u_bar_ddot=(a[model.mesh.elements] @ q.N.T).ravel(),
        u_bar=(de @ q.N.T).ravel(),
    )


def macro_elements(quad: Quadrature, tangents, slope_bar: float) -> np.ndarray:
    """Stacked element tangents; ``tangents`` holds (n_el, n_gp) arrays A_PF, A_Pu, A_fF, A_fu."""
    A_PF, A_Pu, A_fF, A_fu = tangents
    B, N, dV = quad.B, quad.N, quad.dV
    k = np.einsum("eg,ea,eb->eab", dV * A_PF, B, B)
    k += slope_bar * np.einsum("eg,ea,gb->eab", dV * A_Pu, B, N)
    k += np.einsum("eg,ga,eb->eab", dV * A_fF, N, B)
    k += slope_bar * np.einsum("eg,ga,gb->eab", dV * A_fu, N, N)
    return k


def macro_residuals(quad: Quadrature, P_bar, f_rho_bar) -> np.ndarray:
    return quad.B * np.sum(quad.dV * P_bar, axis=1)[:, None] + (quad.dV * f_rho_bar) @ quad.N


def _single(basis: ElementBasis) -> Quadrature:
    length = 2.0 * basis.jacobian
    return Quadrature(
        basis.shape_values,
        basis.shape_gradients[:1],
        (basis.gauss_weights * basis.jacobian)[None],
        np.zeros((1, basis.gauss_weights.size)) + length,  # X unused by the macro element
    )


def macro_element(gp_tangents, basis: ElementBasis, params: NewmarkParams) -> np.ndarray:
    """2x2 element tangent from the TangentSets of the element's two Gauss points."""
    arrs = [np.array([[getattr(t, name) for t in gp_tangents]]) for name in ("A_PF", "A_Pu", "A_fF", "A_fu")]
    return macro_elements(_single(basis), arrs, params.slope)[0]


def macro_residual(gp_values, basis: ElementBasis) -> np.ndarray:
    """Element residual from (P_bar, f_rho_bar) at the two Gauss points."""
    P = np.array([[v[0] for v in gp_values]])
    f = np.array([[v[1] for v in gp_values]])
    return macro_residuals(_single(basis), P, f)[0]


def _micro_pass(model: MacroModel, rves, kin: GpKinematics, mapper):
    tmpl = model.rve_template

    def solve(g):
        load = MicroLoad(kin.F_bar[g], kin.F_bar_ddot[g], kin.u_bar_ddot[g], kin.u_bar[g])
        return rve_mod.solve_micro(tmpl, rves[g], load)

    return list(mapper(solve, range(model.n_gp)))


@dataclass
class StepSolution:
    """Converged but uncommitted step: RVE states still carry their factorizations."""

    time: float
    d: np.ndarray
    kin: GpKinematics
    rves: list
    record: StepRecord


def converge(model: MacroModel, state: MacroState, t: float, mapper=map) -> StepSolution:
    """Newton iteration of one time step without advancing any history."""
    t0 = time.perf_counter()
    tmpl = model.rve_template
    d = state.hist.u.copy()
    d[-1] = model.prescribed(t)
    rves = list(state.rves)
    deltas: list[float] = []
    micro_its = 0
    max_fluct = 0.0
    max_F_gap = 0.0
    n_free = model.mesh.n_nodes - 2
    q = model.quad
    shape = q.dV.shape
    edofs = model.node_dof[model.mesh.elements]
    keep = edofs >= 0
    for it in range(model.max_iter + 1):
        kin = macro_gp_kinematics(model, d, state)
        try:
            start = rves if model.warm_start == "iteration" else state.rves
            rves = _micro_pass(model, start, kin, mapper)
        except MicroDivergenceError as exc:
            raise MacroDivergenceError(f"step {state.step + 1}: {exc}", state.step + 1, deltas) from exc
        for g, r in enumerate(rves):
            micro_its += len(r.trace)
            if tmpl.constraint_mode is rve_mod.ConstraintMode.VOLUME:
                max_fluct = max(max_fluct, abs(rve_mod.mean_fluctuation(tmpl, r)))
            max_F_gap = max(max_F_gap, abs(rve_mod.mean_F(tmpl, r) - kin.F_bar[g]))
        # checked after the micro pass so the RVE states belong to the final D_bar
        if deltas and deltas[-1] < model.tol:
            break
        if it == model.max_iter:
            raise MacroDivergenceError(
                f"step {state.step + 1}: macro Newton did not converge in {model.max_iter} iterations",
                state.step + 1,
                deltas,
            )
        if n_free == 0:
            deltas.append(0.0)
            continue
        try:
            ts = [homogenize(tmpl, r, model.params) for r in rves]
        except IllPosedError as exc:
            raise MacroDivergenceError(f"step {state.step + 1}: {exc}", state.step + 1, deltas) from exc
        tang = [np.array([getattr(x, n) for x in ts]).reshape(shape) for n in ("A_PF", "A_Pu", "A_fF", "A_fu")]
        P = np.array([x.P_bar for x in ts]).reshape(shape)
        f = np.array([x.f_rho_bar for x in ts]).reshape(shape)
        ab = assemble_banded(n_free, macro_elements(q, tang, model.params.slope), edofs)
        R = np.zeros(n_free)
        np.add.at(R, edofs[keep], macro_residuals(q, P, f)[keep])
        delta = solve_banded((1, 1), ab, -R)
        if not np.all(np.isfinite(delta)):
            raise MacroDivergenceError(f"step {state.step + 1}: non-finite update", state.step + 1, deltas)
        d[1:-1] += delta
        deltas.append(float(np.linalg.norm(delta)))
    record = StepRecord(
        state.step + 1, t, len(deltas), deltas, time.perf_counter() - t0, micro_its, max_fluct, max_F_gap
    )
    return StepSolution(t, d, kin, rves, record)


def commit(model: MacroModel, state: MacroState, sol: StepSolution) -> MacroState:
    tmpl = model.rve_template
    return MacroState(
        state.step + 1,
        sol.time,
        newmark.advance(sol.d, state.hist, model.params),
        newmark.advance(sol.kin.F_bar - 1.0, state.H_hist, model.params),
        [rve_mod.commit(tmpl, r) for r in sol.rves],
    )


def step(model: MacroModel, state: MacroState, t: float, mapper=map):
    """Advance one time step to time ``t``; returns the committed state and a StepRecord."""
    sol = converge(model, state, t, mapper)
    return commit(model, state, sol), sol.record


@dataclass
class RunResult:
    node_X: np.ndarray
    times: list = field(default_factory=list)
    displacements: list = field(default_factory=list)
    records: list = field(default_factory=list)
    completed_steps: int = 0
    failure: str | None = None

    @property
    def failure_step(self) -> int | None:
        return None if self.failure is None else self.completed_steps + 1


def run_fe2(model: MacroModel, n_steps: int, mapper=map, on_step=None) -> RunResult:
    """Integrate ``n_steps`` steps; a failing step ends the run and is recorded, not raised."""
    state = initial_state(model)
    result = RunResult(model.mesh.node_coords.copy(), [0.0], [state.u.copy()])
    for n in range(1, n_steps + 1):
        try:
            state, rec = step(model, state, n * model.params.dt, mapper)
        except MacroDivergenceError as exc:
            result.failure = str(exc)
            break
        result.times.append(state.time)
        result.displacements.append(state.u.copy())
        result.records.append(rec)
        result.completed_steps = n
        if on_step is not None:
            on_step(state, rec)
    return result
