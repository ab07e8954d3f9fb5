import numpy as np
import pytest

from coupledot.density_mesh import DensityMesh, square_mesh


@pytest.fixture
def unit_square():
    return square_mesh(0.0, 0.0, 1.0)


def ramp_square():
    """Unit square carrying the density ``x``."""
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    return DensityMesh(v, v[:, 0].copy(), np.array([[0, 1, 2], [0, 2, 3]]))


def random_sites(rng, n, lo=0.0, hi=1.0):
    return lo + (hi - lo) * rng.random((n, 2))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
