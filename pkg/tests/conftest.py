import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from safegrid import load_bundled, run

settings.register_profile(
    "safegrid",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("safegrid")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def case2_cfg():
    return load_bundled("case2")


@pytest.fixture(scope="session")
def case1_cfg():
    return load_bundled("case1")


@pytest.fixture(scope="session")
def case2_log(case2_cfg):
    return run(case2_cfg)


@pytest.fixture(scope="session")
def case1_log(case1_cfg):
    return run(case1_cfg)


@pytest.fixture(scope="session")
def ring():
    a = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)
    g = np.array([1.0, 0.0, 0.0, 0.0])
    return a, g


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
