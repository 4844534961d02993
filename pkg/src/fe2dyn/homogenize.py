"""Homogenized stress, inertia force and the four consistent macroscopic moduli.

All averages use the RVE's Gauss quadrature. With ``s = alpha1 / dt^2`` on the
micro scale and ``s_bar`` on the macro scale::

    A_PF = <A + s_bar rho X^2> - L*^T K*^-1 Lbar* / V
    A_Pu = <rho X>             - L*^T K*^-1 W* / V
    A_fF = s_bar <rho X>       - s W*^T K*^-1 Lbar* / V
    A_fu = <rho>               - s W*^T K*^-1 W* / V

with L* = [L + s Z; 0], Lbar* = [L + s_bar Z; 0] and W* = [W; 0].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_solve

from fe2dyn.errors import IllPosedError
from fe2dyn.newmark import NewmarkParams
from fe2dyn.rve import RveModel, RveState, bordered_matrix, factorize, solve_micro


@dataclass
class SensitivityMatrices:
    K: np.ndarray
    M: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    G: np.ndarray
    mean_A: float
    mean_rhoX: float
    mean_rhoXX: float
    mean_rho: float
    volume: float
    slope: float
    slope_bar: float
    factor: tuple

    def _pad(self, v):
        n_lgr = self.factor[0].shape[0] - v.size
        return np.concatenate([v, np.zeros(n_lgr)])

    @property
    def L_star(self):
        return self._pad(self.L + self.slope * self.Z)

    @property
    def Lbar_star(self):
        return self._pad(self.L + self.slope_bar * self.Z)

    @property
    def W_star(self):
        return self._pad(self.W)

    @property
    def K_star(self):
        """Bordered matrix rebuilt from its blocks; for inspection only."""
        nf = self.K.shape[0]
        C = np.atleast_2d(self.G) if self.G.size else np.zeros((0, nf))
        nl = C.shape[0]
        return np.block(
            [[self.K + self.slope * self.M, C.T], [C, np.zeros((nl, nl))]]
        )


@dataclass(frozen=True)
class TangentSet:
    P_bar: float
    f_rho_bar: float
    A_PF: float
    A_Pu: float
    A_fF: float
    A_fu: float


def _require_converged(state: RveState):
    if state.system is None or state.load is None:
        raise ValueError("state has not been through solve_micro")


def macro_stress(model: RveModel, state: RveState) -> float:
    """P_bar = <P + rho acc X>."""
    _require_converged(state)
    q, s = model.quad, state.system
    rho = model.rho_e[:, None]
    return float(np.sum(q.dV * (s.P + rho * s.acc * q.X)) / model.volume)


def macro_inertia(model: RveModel, state: RveState) -> float:
    """f_rho_bar = <rho acc>; enters the macro residual with a plus sign."""
    _require_converged(state)
    q, s = model.quad, state.system
    return float(np.sum(q.dV * model.rho_e[:, None] * s.acc) / model.volume)


def sensitivity_matrices(
    model: RveModel, state: RveState, macro_params: NewmarkParams | None = None
) -> SensitivityMatrices:
    _require_converged(state)
    q, s = model.quad, state.system
    rho = model.rho_e[:, None]
    V = model.volume
    factor = state.factor
    if factor is None:
        # converged without any Newton step (first guess already exact)
        factor = factorize(bordered_matrix(model, s))
    l_e = q.B * np.sum(q.dV * s.A, axis=1)[:, None]
    z_e = rho * ((q.dV * q.X) @ q.N)
    w_e = rho * (q.dV @ q.N)
    mp = macro_params or model.params
    C = model.constraints
    return SensitivityMatrices(
        K=s.K,
        M=s.M,
        L=model.scatter_vector(l_e),
        Z=model.scatter_vector(z_e),
        W=model.scatter_vector(w_e),
        G=C.squeeze(0) if C.shape[0] == 1 else C,
        mean_A=float(np.sum(q.dV * s.A) / V),
        mean_rhoX=float(np.sum(q.dV * rho * q.X) / V),
        mean_rhoXX=float(np.sum(q.dV * rho * q.X**2) / V),
        mean_rho=float(np.sum(q.dV * rho) / V),
        volume=V,
        slope=model.params.slope,
        slope_bar=mp.slope,
        factor=factor,
    )


def sensitivity_solves(mats: SensitivityMatrices):
    """dD*/dF_bar = -K*^-1 Lbar* and dD*/du_bar_ddot = -K*^-1 W*, one factorization."""
    rhs = np.column_stack([mats.Lbar_star, mats.W_star])
    sol = -lu_solve(mats.factor, rhs, check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise IllPosedError("sensitivity solve produced non-finite values")
    return sol[:, 0], sol[:, 1]


def tangent_PF(mats: SensitivityMatrices, dDdF) -> float:
    return mats.mean_A + mats.slope_bar * mats.mean_rhoXX + mats.L_star @ dDdF / mats.volume


def tangent_Pu(mats: SensitivityMatrices, dDdu) -> float:
    return mats.mean_rhoX + mats.L_star @ dDdu / mats.volume


def tangent_fF(mats: SensitivityMatrices, dDdF) -> float:
    return mats.slope_bar * mats.mean_rhoX + mats.slope * (mats.W_star @ dDdF) / mats.volume


def tangent_fu(mats: SensitivityMatrices, dDdu) -> float:
    return mats.mean_rho + mats.slope * (mats.W_star @ dDdu) / mats.volume


def homogenize(
    model: RveModel, state: RveState, macro_params: NewmarkParams | None = None
) -> TangentSet:
    mats = sensitivity_matrices(model, state, macro_params)
    dDdF, dDdu = sensitivity_solves(mats)
    return TangentSet(
        P_bar=macro_stress(model, state),
        f_rho_bar=macro_inertia(model, state),
        A_PF=float(tangent_PF(mats, dDdF)),
        A_Pu=float(tangent_Pu(mats, dDdu)),
        A_fF=float(tangent_fF(mats, dDdF)),
        A_fu=float(tangent_fu(mats, dDdu)),
    )


def hill_mandel_check(model: RveModel, state: RveState, dF_bar: float, du_bar: float, d_fluct=None):
    """Normalized gap of the multiscale virtual power balance.

    ``d_fluct`` are virtual nodal fluctuations on the free DOFs (zero if None).
    The micro body force is f = -rho acc and the macro one is -f_rho_bar.
    """
    _require_converged(state)
    q, s = model.quad, state.system
    rho = model.rho_e[:, None]
    dd = np.zeros(model.n_free) if d_fluct is None else np.asarray(d_fluct, dtype=float)
    dn = model.expand(dd)[model.mesh.elements]
    dH = np.sum(q.B * dn, axis=1)[:, None]
    du_fl = dn @ q.N.T
    dF = dF_bar + dH
    du = du_bar + dF_bar * q.X + du_fl
    f = -rho * s.acc
    P_bar = macro_stress(model, state)
    f_bar = -macro_inertia(model, state)
    lhs = P_bar * dF_bar - f_bar * du_bar
    micro_terms = q.dV * (s.P * dF - f * du) / model.volume
    rhs = float(np.sum(micro_terms))
    scale = abs(P_bar * dF_bar) + abs(f_bar * du_bar) + float(np.sum(np.abs(micro_terms)))
    return abs(lhs - rhs) / max(scale, 1e-300)


MODULI = ("A_PF", "A_Pu", "A_fF", "A_fu")


@dataclass(frozen=True)
class TangentAudit:
    analytic: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray
    h_F: float
    h_u: float

    @property
    def max_rel_err(self) -> float:
        return float(np.max(self.rel_err))


def _perturbed(model: RveModel, state: RveState, slope_bar: float, dF: float, du: float):
    # F_bar_ddot follows F_bar through the macro Newmark relation
    ld = state.load
    load = replace(ld, F_bar=ld.F_bar + dF, F_bar_ddot=ld.F_bar_ddot + slope_bar * dF, u_bar_ddot=ld.u_bar_ddot + du)
    s = solve_micro(model, state, load)
    return macro_stress(model, s), macro_inertia(model, s)


def fd_tangents(
    model: RveModel, state: RveState, h_F: float, h_u: float, macro_params: NewmarkParams | None = None
) -> np.ndarray:
    """Central differences of (P_bar, f_rho_bar) w.r.t. (F_bar, u_bar_ddot), re-solving from ``state``."""
    _require_converged(state)
    sb = (macro_params or model.params).slope
    pF = _perturbed(model, state, sb, h_F, 0.0)
    mF = _perturbed(model, state, sb, -h_F, 0.0)
    pu = _perturbed(model, state, sb, 0.0, h_u)
    mu = _perturbed(model, state, sb, 0.0, -h_u)
    return np.array(
        [
            (pF[0] - mF[0]) / (2 * h_F),
            (pu[0] - mu[0]) / (2 * h_u),
            (pF[1] - mF[1]) / (2 * h_F),
            (pu[1] - mu[1]) / (2 * h_u),
        ]
    )


def audit_tangents(
    model: RveModel,
    state: RveState,
    macro_params: NewmarkParams | None = None,
    h_F: float = 1e-5,
    refinements: int = 3,
) -> TangentAudit:
    """Compare the closed-form moduli with finite differences.

    Steps h, h/10, h/100 are tried; the pair of neighbouring steps whose FD values
    agree best picks the step used, so the choice never looks at the closed form.
    Relative errors use max(|analytic|, |fd|) floored by a natural scale of each
    modulus, which keeps moduli that vanish by symmetry well defined.
    """
    mats = sensitivity_matrices(model, state, macro_params)
    ts = homogenize(model, state, macro_params)
    analytic = np.array([getattr(ts, n) for n in MODULI])
    half = model.volume / 2.0
    h_u0 = h_F * mats.mean_A / (mats.mean_rho * half)
    hs = [(h_F / 10**k, h_u0 / 10**k) for k in range(refinements)]
    fds = [fd_tangents(model, state, hf, hu, macro_params) for hf, hu in hs]
    if len(fds) > 1:
        spread = [np.max(np.abs(fds[k] - fds[k + 1]) / (np.abs(fds[k + 1]) + 1e-300)) for k in range(len(fds) - 1)]
        best = int(np.argmin(spread)) + 1
    else:
        best = 0
    fd = fds[best]
    scale = 1e-3 * np.array(
        [mats.mean_A, mats.mean_rho * half, mats.slope_bar * mats.mean_rho * half, mats.mean_rho]
    )
    rel = np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), scale)
    return TangentAudit(analytic, fd, rel, hs[best][0], hs[best][1])
