import numpy as np
import pytest

from fe2dyn.material import MaterialPhase
from fe2dyn.newmark import NewmarkParams


@pytest.fixture
def phases():
    """(soft, stiff) laminate constituents with densities in kg/m^3 converted."""
    return (MaterialPhase.from_kg_m3(2e3, 1e3), MaterialPhase.from_kg_m3(2e5, 1e5))


@pytest.fixture
def params():
    return NewmarkParams(5e-5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
