import numpy as np
import pytest

from faceretarget import grid_codec as gc
from faceretarget import morphable_model as mm


@pytest.fixture(scope="session")
def tensor():
    return mm.generate_synthetic_tensor(42)


@pytest.fixture(scope="session")
def codec(tensor):
    return gc.GridCodec(tensor, 288.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
