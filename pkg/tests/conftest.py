import numpy as np
import pytest

from softquote.model import ModelParams
from softquote.ode import solve_hard
from softquote.quadrature import ActionGrid2D


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def grid61(params):
    return ActionGrid2D.build(61, params)


@pytest.fixture(scope="session")
def grid17(params):
    return ActionGrid2D.build(17, params)


@pytest.fixture(scope="session")
def v0(params):
    return solve_hard(params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def zero_intensity(params, **kw):
    """Copy of ``params`` whose fills never happen."""
    return params.with_(intensity_fns=(lambda d: 0.0 * np.asarray(d), lambda d: 0.0 * np.asarray(d)), **kw)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
