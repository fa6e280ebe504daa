import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from horizonrisk.mc import MCBackend, SolverConfig
from horizonrisk.tree import TreeModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tree8():
    return TreeModel.uniform(1.0, 8)


@pytest.fixture(scope="session")
def tree6():
    return TreeModel.uniform(1.0, 6)


@pytest.fixture(scope="session")
def mc_small():
    return MCBackend.simulate(SolverConfig(M=20000, N=20, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
