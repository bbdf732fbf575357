import numpy as np
import pytest

from bdgap import CoefficientModel, equilibrium_profile
from bdgap.equilibrium import z_of_mass


@pytest.fixture(scope="session")
def geometric():
    """``a_i = 1``, ``b_i = 2``: every closed form is a geometric series."""
    return CoefficientModel.table([1.0], [2.0])


@pytest.fixture(scope="session")
def geometric_profile(geometric):
    return equilibrium_profile(geometric, 1.0, 400)


@pytest.fixture(scope="session")
def pt_third():
    return CoefficientModel.power_law(1 / 3, 2 / 3, zs=1.0, q=1.0)


@pytest.fixture(scope="session")
def pt_two_thirds():
    return CoefficientModel.power_law(2 / 3, 2 / 3, zs=1.0, q=1.0)


@pytest.fixture(scope="session")
def pt_half_mass(pt_third):
    """Equilibrium of PT(1/3, 2/3) at half its critical mass."""
    from bdgap import critical_mass
    z = z_of_mass(pt_third, 0.5 * critical_mass(pt_third))
    return z, equilibrium_profile(pt_third, z, 800)


def rel(x, y):
    return abs(x - y) / max(abs(y), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
