import numpy as np
import pytest

from vomap.geometry import GridSpec, ObstacleMap
from vomap.scene import SceneConfig, random_block_scene

# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid16():
    return GridSpec(16, 16, 10.0)


@pytest.fixture
def scene16(grid16):
    return random_block_scene(grid16, SceneConfig(density=0.3), 5)


@pytest.fixture
def empty16(grid16):
    return ObstacleMap.flat(grid16)
