import numpy as np
import pytest

from ctxbai.bandit import BanditInstance


@pytest.fixture
def k2_instance():
    return BanditInstance.gaussian([1.0, 0.75], [1.0, 2.0])


@pytest.fixture
def ctx_instance():
    # K=3, M=2 heteroskedastic Gaussian instance used across modules
    means = [[1.0, 0.6], [0.7, 0.8], [0.2, 0.5]]
    sds = [[1.0, 2.0], [0.5, 1.5], [1.2, 0.8]]
    return BanditInstance.gaussian(means, sds, [0.3, 0.7])


def se_bound(p, n, k=4.0):
    return k * np.sqrt(p * (1 - p) / n)


_ACCEPTANCE: dict = {}


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
