import sys

import numpy as np
import pytest

from subgoal_learning import demo_world_path
from subgoal_learning.env import Environment


def square(cx, cy, half):
    return [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]


def make_env(obstacles=(), bounds=(-20.0, -20.0, 20.0, 20.0), start=(-15.0, 0.0, 0.0), goal=(15.0, 0.0)):
    return Environment([np.asarray(o, dtype=float) for o in obstacles], bounds, start, goal)


@pytest.fixture
def empty_env():
    return make_env()


@pytest.fixture
def square_env():
    return make_env([square(0.0, 0.0, 2.0)])


@pytest.fixture(scope="session")
def demo_env():
    return Environment.load(demo_world_path())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
