import numpy as np
import pytest

from dampwave.models.wave import Grid, SolverConfig
from dampwave.services.wave_service import wave_service


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def grid():
    """dx = 0.05 on [-6, 6]"""
    return Grid(L=6.0, nx=241)


@pytest.fixture
def fine_grid():
    """dx = 2^-6 on [-4, 4]"""
    return Grid(L=4.0, nx=513)


@pytest.fixture
def bump_data(grid):
    return wave_service.make_initial_data("bump", 1.0, 1.0, grid)


@pytest.fixture
def linear_config():
    def make(mu0: float = 1.0, t_end: float = 2.0, **kwargs) -> SolverConfig:
        return SolverConfig(mu0=mu0, t_end=t_end, **kwargs)
    return make


@pytest.fixture
def every_step():
    def times(config: SolverConfig, grid: Grid) -> np.ndarray:
        dt = config.dt(grid)
        return np.arange(int(round(config.t_end / dt)) + 1) * dt
    return times
