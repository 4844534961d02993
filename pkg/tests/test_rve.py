import numpy as np
import pytest

from fe2dyn import rve
from fe2dyn.errors import ConfigError, MicroDivergenceError
from fe2dyn.fe import build_rve_mesh
from fe2dyn.material import MaterialPhase
from fe2dyn.newmark import KinematicHistory, NewmarkParams
from fe2dyn.verification import driven_rve_states


def homogeneous(params, mode="volume", link="periodic"):
    soft = MaterialPhase.from_kg_m3(2e3, 1e3)
    return rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), (soft, soft), mode, link, params)


def test_rest_state_stays_zero(params):
    m = homogeneous(params)
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.0))
    assert np.all(s.d == 0.0) and np.all(s.lam == 0.0)


@pytest.mark.parametrize("link", ["periodic", "volume_avg"])
def test_rigid_acceleration_carried_by_multiplier(params, link):
    m = homogeneous(params, link=link)
    a = 3.7e4
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.0, 0.0, a))
    rho = m.phases[0].rho
    np.testing.assert_allclose(s.d, 0.0, atol=1e-14)
    assert s.lam[0] == pytest.approx(-rho * a, rel=1e-10)


def test_micro_element_arrays(params, phases):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=params)
    st = rve.initial_state(m)
    k_hat, r_hat, me, g = rve.micro_element(m, st, rve.MicroLoad(1.0), 3)
    np.testing.assert_allclose(me.sum(axis=1), phases[0].rho * 0.25)
    np.testing.assert_allclose(g, [0.25, 0.25])
    np.testing.assert_allclose(r_hat, 0.0)
    np.testing.assert_allclose(k_hat, k_hat.T)


def test_uniform_stretch_residual_cancels_inside(params):
    soft = MaterialPhase.from_kg_m3(2e3, 0.0)
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), (soft, soft), params=params)
    sys_ = rve.assemble_system(m, np.zeros(m.n_free), KinematicHistory.zeros(m.mesh.n_nodes),
                               rve.MicroLoad(1.05))
    np.testing.assert_allclose(sys_.r, 0.0, atol=1e-10)


def test_two_phase_dynamic_solve_is_quadratic_and_constrained(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=params)
    st = rve.initial_state(m)
    s = rve.solve_micro(m, st, rve.MicroLoad(1.01, 2e3, 5e4))
    assert abs(rve.mean_fluctuation(m, s)) < 1e-10 * m.volume
    t = [x for x in s.trace if x > 1e-13]
    assert len(t) >= 3
    # |d_{k+1}| <= C |d_k|^2 with a bounded constant
    C = [t[k + 1] / t[k] ** 2 for k in range(len(t) - 1)]
    assert max(C[1:]) < 10 * max(C[0], 1e-3) + 1.0


def test_newton_direction_matches_damped_oracle(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 1.0), phases, params=params)
    load = rve.MicroLoad(1.01, 2e3, 5e4)
    s = rve.solve_micro(m, rve.initial_state(m), load)
    # tangent-free oracle: damped fixed-point on the residual with a frozen preconditioner
    d = np.zeros(m.n_free)
    lam = np.zeros(m.n_lgr)
    hist = KinematicHistory.zeros(m.mesh.n_nodes)
    C = m.constraints
    sys0 = rve.assemble_system(m, d, hist, rve.MicroLoad(1.0))
    P = np.linalg.inv(rve.bordered_matrix(m, sys0))
    for _ in range(400):
        sy = rve.assemble_system(m, d, hist, load)
        r = np.concatenate([sy.r + C.T @ lam, C @ d])
        step = -P @ r
        d += 0.8 * step[: m.n_free]
        lam += 0.8 * step[m.n_free:]
    np.testing.assert_allclose(d, s.d, atol=1e-9 * max(1.0, np.abs(s.d).max()))


def test_periodic_mode_preserves_mean_F(phases, params):
    m = rve.RveModel(build_rve_mesh("B", 1, 10.0, 0.5), phases, params=params)
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.03, -1e3, 2e4))
    assert rve.mean_F(m, s) == pytest.approx(1.03, abs=1e-12)
    assert m.node_dof[-1] == m.node_dof[0]


def test_volume_average_F_mode(phases, params):
    single = rve.RveModel(build_rve_mesh("A", 1, 1.0, 1.0), phases[:1] * 2, "volume", "volume_avg", params)
    # one block per element: int B dV = [-1, 1] for linear shape functions
    np.testing.assert_allclose(rve.apply_constraint_F_volume(single), [[-1.0, 1.0]] * single.mesh.n_elements)
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, "volume", "volume_avg", params)
    assert m.n_lgr == 2
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.03, -1e3, 2e4))
    assert rve.mean_F(m, s) == pytest.approx(1.03, abs=1e-12)


def test_volume_average_F_static_homogeneous_matches_periodic(params):
    a = homogeneous(params, link="periodic")
    b = homogeneous(params, link="volume_avg")
    sa = rve.solve_micro(a, rve.initial_state(a), rve.MicroLoad(1.02))
    sb = rve.solve_micro(b, rve.initial_state(b), rve.MicroLoad(1.02))
    np.testing.assert_allclose(sa.nodal(a), 0.0, atol=1e-14)
    np.testing.assert_allclose(sb.nodal(b), 0.0, atol=1e-14)


def test_fixed_corners_mode(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, "fixed_corners", "periodic", params)
    assert m.n_lgr == 0
    np.testing.assert_array_equal(rve.fixed_corner_mode(m), [0, m.mesh.n_nodes - 1])
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.02, 0.0, 1e4))
    u = s.nodal(m)
    assert u[0] == 0.0 and u[-1] == 0.0


def test_fixed_corners_with_volume_average_is_rejected(phases, params):
    with pytest.raises(ConfigError):
        rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, "fixed_corners", "volume_avg", params)


def test_inverted_element_becomes_micro_divergence(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=params)
    with pytest.raises(MicroDivergenceError):
        rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(-0.5))


def test_iteration_cap_reports_trace(phases):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=NewmarkParams(5e-5), max_iter=1)
    with pytest.raises(MicroDivergenceError) as info:
        rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.2, 1e4, 1e5))
    assert len(info.value.trace) == 1


def test_solve_does_not_touch_history_until_commit(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=params)
    st = rve.initial_state(m)
    s = rve.solve_micro(m, st, rve.MicroLoad(1.01, 1e3, 1e4))
    assert np.all(s.hist.u == 0.0)
    c = rve.commit(m, s)
    np.testing.assert_allclose(c.hist.u, s.nodal(m))
    assert c.factor is None and c.system is None


def test_driven_states_keep_constraint(phases, params):
    m = rve.RveModel(build_rve_mesh("B", 3, 2.5, 0.25), phases, params=params)
    for s in driven_rve_states(m, n_steps=20, keep=(5, 20)):
        assert abs(rve.mean_fluctuation(m, s)) <= 1e-10 * m.volume
        assert rve.mean_F(m, s) == pytest.approx(s.load.F_bar, abs=1e-12)


def test_field_rows_shape(phases, params):
    m = rve.RveModel(build_rve_mesh("A", 1, 10.0, 0.5), phases, params=params)
    s = rve.solve_micro(m, rve.initial_state(m), rve.MicroLoad(1.01, 0.0, 0.0, 2.0))
    rows = rve.field_rows(m, s)
    assert rows.shape == (m.mesh.n_nodes, 4)
    np.testing.assert_allclose(rows[:, 1], 2.0 + 0.01 * rows[:, 0] + rows[:, 2])
