import numpy as np
import pytest

from dynef.basis import custom_bank, raised_cosine_bank
from dynef.graph import GraphPair
from dynef.model import ModelParams


def random_params(graphs, C, K, rng, scale=1.0):
    p = ModelParams.zeros(graphs, C, K)
    p.theta[...] = rng.normal(0, scale, p.theta.shape)
    p.V[...] = rng.normal(0, scale, p.V.shape)
    p.U[...] = rng.normal(0, scale, p.U.shape)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def triangle():
    """Three units, a causal cycle plus a self-loop, one lateral pair {1, 2}."""
    return GraphPair.from_edges(3, [(0, 1), (1, 2), (2, 0), (1, 1)], [(1, 2)])


@pytest.fixture
def bank2():
    return raised_cosine_bank(2, 3)


@pytest.fixture
def impulse():
    return custom_bank([[1.0]])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
