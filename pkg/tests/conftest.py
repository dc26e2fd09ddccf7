import numpy as np
import pytest

from crtbp_reach.dynamics import SystemParams, lagrange_points
from crtbp_reach.structures import find_periodic_orbit

MU = 0.0125

# lines collected by the acceptance module, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return SystemParams(mu=MU, h=1e-3, u_max=0.0)


@pytest.fixture(scope="session")
def L(params):
    return lagrange_points(params)


@pytest.fixture(scope="session")
def lyapunov(params):
    return find_periodic_orbit(params, 0.8156)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


REACH_STATE0 = [0.8156, 0.0, 0.0, 0.1922]
THETAS_24 = [2.0 * np.pi * i / 24 for i in range(24)]


@pytest.fixture(scope="session")
def reach_problem():
    from crtbp_reach.reachability import ReachProblem

    return ReachProblem.build(SystemParams(mu=MU, h=1e-3, u_max=0.1), REACH_STATE0, 1.4)


@pytest.fixture(scope="session")
def reach_set_01(reach_problem):
    from crtbp_reach.reachability import reachable_set

    return reachable_set(reach_problem, THETAS_24)
