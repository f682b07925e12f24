import numpy as np
import pytest

from relfermi.minimizer import initial_set
from relfermi.spectral import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return make_grid(16, 12.0)


@pytest.fixture
def pair_set(small_grid):
    # positive density everywhere, so rho^{1/3} is smooth
    return initial_set(small_grid, 2, width=1.6)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
