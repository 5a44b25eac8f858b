import numpy as np
import pytest

from helmdd.ap_solver import build_plan
from helmdd.assembly import QBlockCache
from helmdd.extension import build_node_map
from helmdd.grid import build_grid_sets
from helmdd.stencil import WaveContext


_ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running convergence or timing runs")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects the one-line verdict of every acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def small():
    """k = 13 structures on n = 32: grid sets, AP plan and gamma node map."""
    sets = build_grid_sets(32)
    plan = build_plan(WaveContext(13.0, sets.grid.h), 32)
    return sets, plan, build_node_map(sets)


@pytest.fixture(scope="session")
def n64():
    sets = build_grid_sets(64)
    plan = build_plan(WaveContext(13.0, sets.grid.h), 64)
    return sets, plan, build_node_map(sets)


@pytest.fixture
def cache(tmp_path):
    return QBlockCache(tmp_path / "qcache")


@pytest.fixture(scope="session")
def session_cache(tmp_path_factory):
    return QBlockCache(tmp_path_factory.mktemp("qcache"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
