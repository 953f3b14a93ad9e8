import numpy as np
import pytest

from bliss.core_math import make_rng

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def unit_square():
    from bliss.problem_families import InstanceDescriptor
    return InstanceDescriptor("tsp", 4, np.array([0, 0, 1, 0, 1, 1, 0, 1], dtype=float))
