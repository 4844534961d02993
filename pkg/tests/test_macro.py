import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fe2dyn import macro, rve
from fe2dyn.fe import assemble, build_rve_mesh, build_uniform_bar, element_basis, quadrature
from fe2dyn.homogenize import TangentSet, homogenize
from fe2dyn.material import MaterialPhase
from fe2dyn.metrics import convergence_order, roundoff_floor
from fe2dyn.newmark import KinematicHistory, NewmarkParams


def small_model(phases, params, n_el=6, L=100.0, u_max=10.0, T=0.002, **kw):
    tmpl = rve.RveModel(build_rve_mesh("A", 1, 10.0, 1.0), phases, "volume", "periodic", params)
    return macro.MacroModel(build_uniform_bar(L, n_el), params, tmpl, u_max, T, **kw)


def test_impact_pulse_shape():
    T, u = 0.01, 100.0
    assert macro.impact_displacement(0.0, u, T) == 0.0
    assert macro.impact_displacement(T, u, T) == 0.0
    assert macro.impact_displacement(T / 2, u, T) == pytest.approx(u)
    assert macro.impact_displacement(2 * T, u, T) == 0.0
    h = 1e-7
    for t in (0.0, T):
        slope = (macro.impact_displacement(t + h, u, T) - macro.impact_displacement(t - h, u, T)) / (2 * h)
        assert abs(slope) < 1e-6


def test_macro_element_reduces_to_static():
    b = element_basis(2.0)
    ts = [TangentSet(0.0, 0.0, 5.0, 0.0, 0.0, 0.0)] * 2
    k = macro.macro_element(ts, b, NewmarkParams(1e-3))
    np.testing.assert_allclose(k, 2.5 * np.array([[1, -1], [-1, 1]]))


def test_macro_element_homogeneous_rest_is_stiffness_plus_mass(params):
    # a tiny RVE makes the micro-inertia contribution s <rho X^2> negligible
    ph = MaterialPhase.from_kg_m3(2e3, 1e3, "linear")
    tmpl = rve.RveModel(build_rve_mesh("A", 1, 0.01, 0.0025), (ph, ph), params=params)
    s = rve.solve_micro(tmpl, rve.initial_state(tmpl), rve.MicroLoad(1.0))
    ts = homogenize(tmpl, s)
    l = 33.0
    k = macro.macro_element([ts, ts], element_basis(l), params)
    expected = 2e3 / l * np.array([[1, -1], [-1, 1]]) + params.slope * ph.rho * l / 6 * np.array([[2, 1], [1, 2]])
    np.testing.assert_allclose(k, expected, rtol=1e-6)


@given(vals=st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=8), length=st.floats(0.1, 50.0))
@settings(max_examples=30, deadline=None)
def test_macro_element_matches_quadrature_oracle(vals, length):
    p = NewmarkParams(1e-4)
    ts = [TangentSet(0.0, 0.0, *vals[:4]), TangentSet(0.0, 0.0, *vals[4:])]
    b = element_basis(length)
    k = np.zeros((2, 2))
    for g in range(2):
        N = b.shape_values[g]
        B = b.shape_gradients[g]
        w = b.gauss_weights[g] * b.jacobian
        t = ts[g]
        k += w * (np.outer(B, B) * t.A_PF + p.slope * np.outer(B, N) * t.A_Pu
                  + np.outer(N, B) * t.A_fF + p.slope * np.outer(N, N) * t.A_fu)
    np.testing.assert_allclose(macro.macro_element(ts, b, p), k, rtol=1e-12, atol=1e-12 * np.abs(k).max() + 1e-300)


def test_macro_residual_cases(rng):
    b = element_basis(4.0)
    np.testing.assert_array_equal(macro.macro_residual([(0.0, 0.0)] * 2, b), 0.0)
    mesh = build_uniform_bar(12.0, 3)
    q = quadrature(mesh)
    r = macro.macro_residuals(q, np.full(q.dV.shape, 7.0), np.zeros(q.dV.shape))
    R = assemble(4, r, mesh.elements)
    np.testing.assert_allclose(R[1:-1], 0.0, atol=1e-12)
    vals = rng.normal(size=(2, 2))
    r1 = macro.macro_residual([tuple(vals[0]), tuple(vals[1])], b)
    oracle = sum(b.gauss_weights[g] * b.jacobian * (b.shape_gradients[g] * vals[g, 0] + b.shape_values[g] * vals[g, 1])
                 for g in range(2))
    np.testing.assert_allclose(r1, oracle)


def test_gp_kinematics(phases, params):
    m = small_model(phases, params)
    state = macro.initial_state(m)
    X = m.mesh.node_coords
    kin = macro.macro_gp_kinematics(m, 0.01 * X, state)
    np.testing.assert_allclose(kin.F_bar, 1.01)
    d = np.full(X.size, 0.3)
    kin = macro.macro_gp_kinematics(m, d, state)
    np.testing.assert_allclose(kin.F_bar, 1.0)
    np.testing.assert_allclose(kin.F_bar_ddot, 0.0)
    np.testing.assert_allclose(kin.u_bar_ddot, 0.3 * params.slope)
    assert m.n_gp == 2 * m.mesh.n_elements


def test_zero_load_converges_in_one_iteration(phases, params):
    m = small_model(phases, params, u_max=0.0)
    state, rec = macro.step(m, macro.initial_state(m), params.dt)
    assert rec.iterations == 1 and rec.deltas == [0.0]
    assert np.all(state.u == 0.0)


def test_step_commits_histories(phases, params):
    m = small_model(phases, params)
    s0 = macro.initial_state(m)
    s1, rec = macro.step(m, s0, 5 * params.dt)
    assert s1.step == 1 and s1.u[-1] == pytest.approx(m.prescribed(5 * params.dt))
    assert len(s1.rves) == m.n_gp
    assert all(r.factor is None for r in s1.rves)
    assert rec.max_F_gap < 1e-12
    assert rec.max_mean_fluct < 1e-10


def test_global_tangent_matches_finite_differences(phases, params):
    m = small_model(phases, params)
    state = macro.initial_state(m)
    for n in range(1, 12):
        state, _ = macro.step(m, state, n * params.dt)
    d0 = state.u.copy()
    d0[1:-1] += 0.05 * np.sin(np.arange(1, m.mesh.n_nodes - 1))
    d0[-1] = m.prescribed(12 * params.dt)
    nf = m.mesh.n_nodes - 2
    q = m.quad
    edofs = m.node_dof[m.mesh.elements]

    def residual_and_tangent(d):
        kin = macro.macro_gp_kinematics(m, d, state)
        rv = macro._micro_pass(m, state.rves, kin, map)
        ts = [homogenize(m.rve_template, r, params) for r in rv]
        tang = [np.array([getattr(x, k) for x in ts]).reshape(q.dV.shape) for k in ("A_PF", "A_Pu", "A_fF", "A_fu")]
        P = np.array([x.P_bar for x in ts]).reshape(q.dV.shape)
        f = np.array([x.f_rho_bar for x in ts]).reshape(q.dV.shape)
        K = assemble(nf, macro.macro_elements(q, tang, params.slope), edofs)
        R = assemble(nf, macro.macro_residuals(q, P, f), edofs)
        return R, K

    _, K = residual_and_tangent(d0)
    h = 1e-6
    fd = np.zeros_like(K)
    for j in range(nf):
        dp, dm = d0.copy(), d0.copy()
        dp[j + 1] += h
        dm[j + 1] -= h
        fd[:, j] = (residual_and_tangent(dp)[0] - residual_and_tangent(dm)[0]) / (2 * h)
    assert np.abs(fd - K).max() <= 1e-6 * np.abs(K).max()


def test_newton_is_quadratic_on_small_bar(phases, params):
    m = small_model(phases, params, u_max=10.0)
    res = macro.run_fe2(m, 20)
    ps = [convergence_order(r.deltas, roundoff_floor(u)) for r, u in zip(res.records, res.displacements[1:])]
    defined = [p for p in ps if p is not None]
    assert len(defined) >= 15 and np.median(defined) >= 1.8
    # Newton contraction: each update is bounded by a constant times the square of the previous one
    for r, u in zip(res.records, res.displacements[1:]):
        d = [x for x in r.deltas if x > roundoff_floor(u)]
        for a, b in zip(d, d[1:]):
            assert b <= 0.1 * a**2


def test_warm_start_choice_does_not_change_results(phases, params):
    a = macro.run_fe2(small_model(phases, params), 15)
    b = macro.run_fe2(small_model(phases, params, warm_start="step"), 15)
    np.testing.assert_allclose(np.array(a.displacements), np.array(b.displacements), rtol=0, atol=1e-9)


def test_massless_run_is_quasi_static(params):
    soft = MaterialPhase(2e3, 0.0, "linear")
    stiff = MaterialPhase(2e5, 0.0, "linear")
    m = small_model((soft, stiff), params)
    res = macro.run_fe2(m, 20)
    X = m.mesh.node_coords
    for t, u in zip(res.times, res.displacements):
        np.testing.assert_allclose(u, m.prescribed(t) * X / X[-1], atol=1e-9)


def test_failure_is_recorded_with_step(phases, params):
    tmpl = rve.RveModel(build_rve_mesh("A", 1, 10.0, 1.0), phases, params=params, max_iter=1)
    m = macro.MacroModel(build_uniform_bar(100.0, 6), params, tmpl, 10.0, 0.002)
    res = macro.run_fe2(m, 10)
    assert res.failure is not None
    assert res.failure_step == res.completed_steps + 1
    assert len(res.times) == res.completed_steps + 1


def test_invalid_warm_start(phases, params):
    with pytest.raises(ValueError):
        small_model(phases, params, warm_start="never")


def test_threaded_map_is_identical(phases, params):
    from concurrent.futures import ThreadPoolExecutor

    a = macro.run_fe2(small_model(phases, params), 5)
    with ThreadPoolExecutor(3) as pool:
        b = macro.run_fe2(small_model(phases, params), 5, mapper=pool.map)
    np.testing.assert_array_equal(np.array(a.displacements), np.array(b.displacements))


def test_history_is_gp_local(phases, params):
    m = small_model(phases, params)
    s, _ = macro.step(m, macro.initial_state(m), 3 * params.dt)
    assert isinstance(s.H_hist, KinematicHistory) and s.H_hist.u.shape == (m.n_gp,)
