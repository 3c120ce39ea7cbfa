import numpy as np
import pytest

from percqip.config import Box, RngStream


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stream():
    return RngStream(2024, 0)


def square(side, periodic=False, dim=2, lower=0.0):
    return Box.cube(dim, side, lower=lower, periodic=periodic)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
