import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fe2dyn.errors import ConfigError
from fe2dyn.newmark import KinematicHistory, NewmarkParams, acceleration, advance, velocity

finite = st.floats(-1e3, 1e3)


def test_rest_stays_at_rest():
    p = NewmarkParams(0.1)
    h = KinematicHistory(np.array([2.0]), np.zeros(1), np.zeros(1))
    assert acceleration(np.array([2.0]), h, p)[0] == 0.0


def test_unit_step_values():
    p = NewmarkParams(1.0)
    h = KinematicHistory.zeros(1)
    a = acceleration(np.array([1.0]), h, p)
    assert a[0] == pytest.approx(4.0)
    assert p.alpha1 == 4.0
    assert velocity(a, h, p)[0] == pytest.approx(2.0)


@given(u=finite, v=finite, a=finite, x=finite)
def test_slope_is_alpha1_over_dt2(u, v, a, x):
    p = NewmarkParams(1e-3)
    h = KinematicHistory(np.array([u]), np.array([v]), np.array([a]))
    d = 1e-3
    fd = (acceleration(np.array([x + d]), h, p) - acceleration(np.array([x - d]), h, p)) / (2 * d)
    assert fd[0] == pytest.approx(p.slope, rel=1e-6)
    assert p.slope == p.alpha1 / p.dt**2


@given(v=finite, a=finite)
def test_constant_acceleration_velocity(v, a):
    p = NewmarkParams(0.01, gamma=0.7)
    h = KinematicHistory(np.zeros(1), np.array([v]), np.array([a]))
    assert velocity(np.array([a]), h, p)[0] == pytest.approx(v + 0.01 * a)


def test_oscillator_energy_is_conserved():
    m, k = 2.0, 50.0
    p = NewmarkParams(0.05)
    h = KinematicHistory(np.array([1.0]), np.array([0.3]), np.array([-k / m]))
    e0 = 0.5 * m * h.v[0] ** 2 + 0.5 * k * h.u[0] ** 2
    for _ in range(200):
        # m a + k u = 0 with a = (u - h_n) * slope + ...
        hn = h.u + p.dt * h.v + p.dt**2 * (0.5 - p.beta) * h.a
        u = m * p.slope * hn / (m * p.slope + k)
        e_prev = 0.5 * m * h.v[0] ** 2 + 0.5 * k * h.u[0] ** 2
        h = advance(u, h, p)
        e = 0.5 * m * h.v[0] ** 2 + 0.5 * k * h.u[0] ** 2
        assert abs(e - e_prev) <= 1e-10 * e0
    assert e == pytest.approx(e0, rel=1e-10)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=1.0, beta=0.0), dict(dt=1.0, beta=0.6),
                                dict(dt=1.0, gamma=0.4), dict(dt=1.0, gamma=1.1)])
def test_invalid_params(kw):
    with pytest.raises((ConfigError, ValueError)):
        NewmarkParams(**kw)


def test_history_copy_is_independent():
    h = KinematicHistory.zeros(3)
    c = h.copy()
    c.u[0] = 1.0
    assert h.u[0] == 0.0
