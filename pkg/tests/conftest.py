import numpy as np
import pytest

from graph_utils import make_graph
from sampler_utils import synthetic_graph


def random_graph(rng, n, p=0.4, num_labels=2):
    """Erdos-Renyi style labeled graph, possibly disconnected."""
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return make_graph(rng.integers(num_labels, size=n), edges)


def connected_graph(rng, n, num_labels=2, extra=0.3):
    return synthetic_graph(n, list(range(num_labels)), extra, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def triangle():
    return make_graph([0, 0, 0], [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def square():
    return make_graph([0, 0, 0, 0], [(0, 1), (1, 2), (2, 3), (3, 0)])


@pytest.fixture
def k4():
    return make_graph([0, 0, 0, 0], [(u, v) for u in range(4) for v in range(u + 1, 4)])


@pytest.fixture
def path3():
    return make_graph([0, 1, 2], [(0, 1), (1, 2)])


@pytest.fixture
def star5():
    return make_graph([1, 0, 0, 0, 0, 0], [(0, v) for v in range(1, 6)])
