"""Microscopic boundary-value problem with inertia and kinematic scale links.

The unknowns are the nodal displacement fluctuations and, depending on the
mode, Lagrange multipliers. The total micro displacement is
u = u_bar + (F_bar - 1) X + u_fluct with X measured from the RVE centroid, so
the micro acceleration is u_bar_ddot + F_bar_ddot X + fluct_ddot.

Sign convention: the assembled out-of-balance force is
r = int(B^T P + N rho acc) dV + C^T lam, and each Newton step solves
K* dD* = -[r; C d] so that D* <- D* + dD*.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from fe2dyn import newmark
from fe2dyn.errors import ConfigError, IllPosedError, InvertedElementError, MicroDivergenceError
from fe2dyn.fe import Mesh1D, Quadrature, quadrature
from fe2dyn.material import MaterialPhase, stress, tangent
from fe2dyn.newmark import KinematicHistory, NewmarkParams


class ConstraintMode(str, Enum):
    VOLUME = "volume"
    FIXED_CORNERS = "fixed_corners"


class FLink(str, Enum):
    PERIODIC = "periodic"
    VOLUME_AVG = "volume_avg"


@dataclass(frozen=True)
class MicroLoad:
    """Macroscopic input at one Gauss point; ``u_bar`` only feeds field output."""

    F_bar: float
    F_bar_ddot: float = 0.0
    u_bar_ddot: float = 0.0
    u_bar: float = 0.0


def constitutive(phases, phase_of_element, F):
    """Stress and tangent at stacked Gauss points (n_el, n_gp)."""
    P = np.empty_like(F)
    A = np.empty_like(F)
    for i, ph in enumerate(phases):
        sel = phase_of_element == i
        if np.any(sel):
            P[sel] = stress(ph, F[sel])
            A[sel] = tangent(ph, F[sel])
    return P, A


def element_arrays(quad: Quadrature, rho_e, P, A, acc):
    """Element stiffness, mass and residual from Gauss-point stress, tangent and acceleration.

    Returns k (n_el, 2, 2) = int B A B, m (n_el, 2, 2) = int N rho N and
    r (n_el, 2) = int (B P + N rho acc).
    """
    B = quad.B
    k = np.einsum("e,ea,eb->eab", np.sum(quad.dV * A, axis=1), B, B)
    m = rho_e[:, None, None] * np.einsum("eg,ga,gb->eab", quad.dV, quad.N, quad.N)
    r = B * np.sum(quad.dV * P, axis=1)[:, None] + rho_e[:, None] * ((quad.dV * acc) @ quad.N)
    return k, m, r


@dataclass(frozen=True, eq=False)
class RveModel:
    mesh: Mesh1D
    phases: tuple
    constraint_mode: ConstraintMode = ConstraintMode.VOLUME
    f_link_mode: FLink = FLink.PERIODIC
    params: NewmarkParams = field(default_factory=lambda: NewmarkParams(dt=5e-5))
    tol: float = 1e-10
    max_iter: int = 25

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        object.__setattr__(self, "constraint_mode", ConstraintMode(self.constraint_mode))
        object.__setattr__(self, "f_link_mode", FLink(self.f_link_mode))
        if self.mesh.phase_of_element.max() >= len(self.phases):
            raise ConfigError("mesh references a phase that is not defined")
        if (
            self.constraint_mode is ConstraintMode.FIXED_CORNERS
            and self.f_link_mode is FLink.VOLUME_AVG
        ):
            raise ConfigError(
                "fixed corners already enforce <F> = F_bar; an extra volume-average "
                "constraint would make the bordered matrix singular"
            )

    @property
    def volume(self) -> float:
        return self.mesh.volume

    @cached_property
    def quad(self) -> Quadrature:
        return quadrature(self.mesh)

    @cached_property
    def rho_e(self) -> np.ndarray:
        rho = np.array([ph.rho for ph in self.phases])
        return rho[self.mesh.phase_of_element]

    @cached_property
    def node_dof(self) -> np.ndarray:
        """Free-DOF index of every node; -1 marks an eliminated node."""
        n = self.mesh.n_nodes
        if self.constraint_mode is ConstraintMode.FIXED_CORNERS:
            dof = np.full(n, -1)
            dof[1:-1] = np.arange(n - 2)
            return dof
        if self.f_link_mode is FLink.PERIODIC:
            dof = np.arange(n)
            dof[-1] = 0
            return dof
        return np.arange(n)

    @cached_property
    def n_free(self) -> int:
        return int(self.node_dof.max()) + 1

    @cached_property
    def elem_dofs(self) -> np.ndarray:
        return self.node_dof[self.mesh.elements]

    @cached_property
    def _scatter(self):
        ed = self.elem_dofs
        keep_v = ed >= 0
        rows = np.broadcast_to(ed[:, :, None], (ed.shape[0], 2, 2))
        cols = np.broadcast_to(ed[:, None, :], (ed.shape[0], 2, 2))
        keep_m = (rows >= 0) & (cols >= 0)
        flat = rows[keep_m] * self.n_free + cols[keep_m]
        return keep_v, ed[keep_v], keep_m, flat

    def scatter_vector(self, elem_vals: np.ndarray) -> np.ndarray:
        keep, idx, _, _ = self._scatter
        return np.bincount(idx, weights=elem_vals[keep], minlength=self.n_free)

    def scatter_matrix(self, elem_vals: np.ndarray) -> np.ndarray:
        _, _, keep, flat = self._scatter
        n = self.n_free
        return np.bincount(flat, weights=elem_vals[keep], minlength=n * n).reshape(n, n)

    def expand(self, d_free: np.ndarray) -> np.ndarray:
        """Nodal fluctuations from free DOFs."""
        d_ext = np.append(d_free, 0.0)
        return d_ext[self.node_dof]

    @cached_property
    def g_elements(self) -> np.ndarray:
        """int N dV per element, (n_el, 2)."""
        return (self.quad.dV @ self.quad.N)

    @cached_property
    def constraints(self) -> np.ndarray:
        """Constraint rows C (n_lgr, n_free); rows are homogeneous, C d = 0."""
        rows = []
        if self.constraint_mode is ConstraintMode.VOLUME:
            rows.append(self.scatter_vector(self.g_elements))
        if self.f_link_mode is FLink.VOLUME_AVG:
            rows.append(self.scatter_vector(apply_constraint_F_volume(self)))
        return np.array(rows).reshape(len(rows), self.n_free)

    @property
    def n_lgr(self) -> int:
        return self.constraints.shape[0]


@dataclass
class MicroSystem:
    """Fields and global matrices assembled at one Newton iterate."""

    F: np.ndarray
    P: np.ndarray
    A: np.ndarray
    acc: np.ndarray
    K: np.ndarray
    M: np.ndarray
    r: np.ndarray


@dataclass
class RveState:
    """Fluctuation DOFs, multipliers and nodal Newmark history of one RVE."""

    d: np.ndarray
    lam: np.ndarray
    hist: KinematicHistory
    load: MicroLoad | None = None
    trace: list = field(default_factory=list)
    system: MicroSystem | None = None
    factor: tuple | None = None

    def nodal(self, model: RveModel) -> np.ndarray:
        return model.expand(self.d)


def initial_state(model: RveModel) -> RveState:
    return RveState(
        np.zeros(model.n_free), np.zeros(model.n_lgr), KinematicHistory.zeros(model.mesh.n_nodes)
    )


def assemble_system(model: RveModel, d: np.ndarray, hist: KinematicHistory, load: MicroLoad):
    quad = model.quad
    u = model.expand(d)
    a_fl = newmark.acceleration(u, hist, model.params)
    ue = u[model.mesh.elements]
    F = load.F_bar + np.sum(quad.B * ue, axis=1)[:, None] * np.ones_like(quad.dV)
    acc = load.u_bar_ddot + load.F_bar_ddot * quad.X + a_fl[model.mesh.elements] @ quad.N.T
    P, A = constitutive(model.phases, model.mesh.phase_of_element, F)
    k, m, r = element_arrays(quad, model.rho_e, P, A, acc)
    return MicroSystem(
        F, P, A, acc, model.scatter_matrix(k), model.scatter_matrix(m), model.scatter_vector(r)
    )


def micro_element(model: RveModel, state: RveState, load: MicroLoad, el: int):
    """(k_hat, r_hat, m, g) of one element at the state's current fluctuations."""
    quad = model.quad
    u = state.nodal(model)
    a_fl = newmark.acceleration(u, state.hist, model.params)
    nodes = model.mesh.elements[el]
    F = load.F_bar + quad.B[el] @ u[nodes] + np.zeros(quad.dV.shape[1])
    acc = load.u_bar_ddot + load.F_bar_ddot * quad.X[el] + quad.N @ a_fl[nodes]
    phase = model.phases[model.mesh.phase_of_element[el]]
    P, A = stress(phase, F), tangent(phase, F)
    sub = Quadrature(quad.N, quad.B[el : el + 1], quad.dV[el : el + 1], quad.X[el : el + 1])
    k, m, r = element_arrays(sub, model.rho_e[el : el + 1], P[None], A[None], acc[None])
    return k[0] + model.params.slope * m[0], r[0], m[0], model.g_elements[el].copy()


def bordered_matrix(model: RveModel, system: MicroSystem) -> np.ndarray:
    C = model.constraints
    K_hat = system.K + model.params.slope * system.M
    nl = C.shape[0]
    return np.block([[K_hat, C.T], [C, np.zeros((nl, nl))]])


def factorize(Kstar: np.ndarray):
    lu, piv = lu_factor(Kstar, check_finite=False)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-13 * diag.max():
        raise IllPosedError("bordered RVE matrix is singular")
    return lu, piv


def solve_micro(model: RveModel, state: RveState, load: MicroLoad) -> RveState:
    """Newton iteration on the bordered system, warm-started from ``state``.

    The history is left untouched; see :func:`commit`. The returned state keeps
    the system assembled at the converged iterate and the LU factors of the last
    bordered matrix, which the tangent computation reuses.
    """
    d = state.d.copy()
    lam = state.lam.copy()
    C = model.constraints
    nf = model.n_free
    trace = []
    factor = None
    for it in range(model.max_iter + 1):
        try:
            system = assemble_system(model, d, state.hist, load)
        except InvertedElementError as exc:
            raise MicroDivergenceError(f"micro Newton diverged: {exc}", trace) from exc
        if trace and trace[-1] < model.tol * max(1.0, np.sqrt(d @ d + lam @ lam)):
            return RveState(d, lam, state.hist, load, trace, system, factor)
        if it == model.max_iter:
            break
        factor = factorize(bordered_matrix(model, system))
        rhs = -np.concatenate([system.r + C.T @ lam, C @ d])
        delta = lu_solve(factor, rhs, check_finite=False)
        if not np.all(np.isfinite(delta)):
            raise MicroDivergenceError("micro Newton produced non-finite update", trace)
        d += delta[:nf]
        lam += delta[nf:]
        trace.append(float(np.linalg.norm(delta)))
    raise MicroDivergenceError(f"micro Newton did not converge in {model.max_iter} iterations", trace)


def commit(model: RveModel, state: RveState) -> RveState:
    """Advance the Newmark history to the converged fluctuations."""
    hist = newmark.advance(state.nodal(model), state.hist, model.params)
    return replace(state, hist=hist, trace=[], system=None, factor=None)


def mean_fluctuation(model: RveModel, state: RveState) -> float:
    """<u_fluct> evaluated with the same quadrature as the constraint."""
    u = state.nodal(model)
    return float(np.sum(model.g_elements * u[model.mesh.elements]) / model.volume)


def mean_F(model: RveModel, state: RveState) -> float:
    u = state.nodal(model)
    F = state.load.F_bar + np.sum(model.quad.B * u[model.mesh.elements], axis=1)
    return float(np.sum(F * model.mesh.lengths) / model.volume)


def apply_constraint_F_volume(model: RveModel) -> np.ndarray:
    """Element blocks int B dV of the volume-averaged deformation-gradient constraint."""
    return model.quad.B * model.quad.dV.sum(axis=1)[:, None]


def fixed_corner_mode(model: RveModel) -> np.ndarray:
    """Node indices whose fluctuation is held at zero (empty unless FIXED_CORNERS)."""
    return np.flatnonzero(model.node_dof < 0)


def field_rows(model: RveModel, state: RveState):
    """(node_X, u_total, u_fluct, acceleration) at every RVE node."""
    load = state.load or MicroLoad(1.0)
    X = model.mesh.node_coords
    u = state.nodal(model)
    a_fl = newmark.acceleration(u, state.hist, model.params)
    u_tot = load.u_bar + (load.F_bar - 1.0) * X + u
    acc = load.u_bar_ddot + load.F_bar_ddot * X + a_fl
    return np.column_stack([X, u_tot, u, acc])
