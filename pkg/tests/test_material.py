import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fe2dyn.errors import ConfigError, InvertedElementError
from fe2dyn.material import KG_PER_M3, Law, MaterialPhase, stress, tangent


def test_stvk_values():
    soft = MaterialPhase(2e3, 0.0)
    assert stress(soft, 1.0) == 0.0
    assert stress(soft, 1.1) == pytest.approx(231.0, rel=1e-14)
    assert stress(MaterialPhase(2e5, 0.0), 0.9) == pytest.approx(-17100.0, rel=1e-14)
    assert tangent(soft, 1.0) == pytest.approx(2e3)
    assert tangent(soft, 1.1) == pytest.approx(2630.0, rel=1e-14)


def test_linear_law():
    ph = MaterialPhase(2e3, 0.0, "linear")
    assert stress(ph, 1.1) == pytest.approx(200.0)
    assert tangent(ph, 0.7) == 2e3


@given(F=st.floats(0.8, 1.2), law=st.sampled_from(list(Law)), E=st.floats(1.0, 1e6))
def test_tangent_matches_central_difference(F, law, E):
    ph = MaterialPhase(E, 0.0, law)
    h = 1e-6
    fd = (stress(ph, F + h) - stress(ph, F - h)) / (2 * h)
    assert fd == pytest.approx(tangent(ph, F), rel=1e-7)


@given(F=st.floats(1 / np.sqrt(3) + 1e-3, 3.0))
def test_stvk_increasing_above_critical_stretch(F):
    assert tangent(MaterialPhase(1.0, 0.0), F) > 0.0


@pytest.mark.parametrize("F", [0.0, -0.2])
def test_inverted_element(F):
    with pytest.raises(InvertedElementError):
        stress(MaterialPhase(1.0, 0.0), F)
    with pytest.raises(InvertedElementError):
        tangent(MaterialPhase(1.0, 0.0), np.array([1.0, F]))


def test_invalid_phase_parameters():
    with pytest.raises(ConfigError):
        MaterialPhase(0.0, 1.0)
    with pytest.raises(ConfigError):
        MaterialPhase(1.0, -1.0)
    with pytest.raises(ValueError):
        MaterialPhase(1.0, 1.0, "neo-hooke")


def test_density_conversion_gives_force_units():
    ph = MaterialPhase.from_kg_m3(2e3, 1e3)
    assert ph.rho == pytest.approx(1e3 * KG_PER_M3)
    # 1000 kg/m^3 at 1 m/s^2 (= 1e3 mm/s^2) gives 1e3 N/m^3 = 1e-6 N/mm^3
    assert ph.rho * 1e3 == pytest.approx(1e-6)
