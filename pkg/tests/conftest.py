import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sknr import EotProblem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, reported once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_problem(rng: np.random.Generator, n: int, m: int, epsilon: float, dim: int = 2) -> EotProblem:
    x = rng.normal(size=(n, dim))
    y = rng.normal(size=(m, dim)) + 0.5
    C = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    a = rng.uniform(0.5, 1.5, n)
    b = rng.uniform(0.5, 1.5, m)
    return EotProblem.from_arrays(C, a / a.sum(), b / b.sum(), epsilon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
