import numpy as np
import pytest

from cogbd.graph import build_graph


@pytest.fixture
def path3():
    """Path 0-1-2 with 2-d features, all labeled."""
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return build_graph([(0, 1), (1, 2)], x, [0, 1, 0], [True, True, True], 2)


def random_graph(n, f, p=0.4, k=3, seed=0, labeled=None):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    labels = rng.integers(0, k, n)
    mask = np.ones(n, bool) if labeled is None else labeled
    labels = np.where(mask, labels, -1)
    return build_graph(edges, rng.standard_normal((n, f)), labels, mask, k)
