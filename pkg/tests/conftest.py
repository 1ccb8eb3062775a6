import numpy as np
import pytest

from lhdgen.dataset_io import BackgroundParams, synth_background
from lhdgen.scene import SynthConfig
from lhdgen.sensor import ScanGrid, SensorPose

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def grid():
    return ScanGrid()


@pytest.fixture(scope="session")
def pose():
    return SensorPose()


@pytest.fixture(scope="session")
def room_pool(grid, pose):
    params = BackgroundParams(length=50000.0, width=50000.0, height=4000.0, hole_fraction=0.05)
    return [synth_background("room", params, seed, grid, pose) for seed in range(4)]


@pytest.fixture(scope="session")
def empty_pool(grid):
    return [np.zeros(grid.shape, dtype=np.float32)]


@pytest.fixture(scope="session")
def default_synth():
    return SynthConfig()


@pytest.fixture
def record_criterion():
    def record(number: int, name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
