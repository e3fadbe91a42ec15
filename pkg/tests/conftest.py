import numpy as np
import pytest
from hypothesis import settings

from weaktraj import OscillatorParams, make_superposition
from weaktraj.config import scenario

settings.register_profile("repo", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repo")

STATIC = OscillatorParams()
MATHIEU = OscillatorParams(v=1.0, kappa=0.2, omega=1.0)


@pytest.fixture(scope="session")
def static_branch():
    """Coherent static branch, q(t) = (sin t, 0), alpha = sqrt 2."""
    return make_superposition(STATIC, [0, 0], [[1.0, 0.0]], weights=[1.0], alpha0=np.sqrt(2),
                              t0=0.0, t1=2 * np.pi + 1)


@pytest.fixture(scope="session")
def mathieu_single():
    return make_superposition(MATHIEU, [0.3, -0.2], [[1.0, 0.5]], weights=[1.0], alpha0=[1.2, 0.9],
                              t0=0.0, t1=4.0)


@pytest.fixture(scope="session")
def mathieu_three():
    return make_superposition(MATHIEU, [0, 0], [[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]],
                              alpha0=np.sqrt(2), t0=0.0, t1=4.0)


@pytest.fixture(scope="session")
def fig1_cfg():
    return scenario("fig1_two_branch")


@pytest.fixture(scope="session")
def fig1_state(fig1_cfg):
    return fig1_cfg.superposition()


@pytest.fixture(scope="session")
def fig4_cfg():
    return scenario("fig4_three_branch")


@pytest.fixture(scope="session")
def fig4_state(fig4_cfg):
    return fig4_cfg.superposition()


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
