import numpy as np
import pytest

from cahn_delaunay import config, pipeline

_ACCEPTANCE_LINES: list[str] = []


class SolutionCache:
    """Default-config 2D solves shared across the session, keyed by (tau, eps)."""

    def __init__(self):
        self._store = {}
        self.solve_seconds = {}

    def get(self, tau, eps):
        import time

        if (tau, eps) not in self._store:
            t0 = time.perf_counter()
            self._store[(tau, eps)] = pipeline._solve(tau, eps, config.defaults())
            self.solve_seconds[(tau, eps)] = time.perf_counter() - t0
        return self._store[(tau, eps)]


@pytest.fixture(scope="session")
def solutions():
    return SolutionCache()


@pytest.fixture(scope="session")
def curve06(solutions):
    return solutions.get(0.6, 0.1)[0]


@pytest.fixture(scope="session")
def profile01(solutions):
    return solutions.get(0.6, 0.1)[1]


@pytest.fixture(scope="session")
def solution06(solutions):
    """tau = 0.6, eps = 0.1 solution on the default order-4 grid."""
    return solutions.get(0.6, 0.1)[2]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def report(number: int, title: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
