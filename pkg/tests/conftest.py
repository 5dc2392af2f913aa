import numpy as np
import pytest

from scorecd.scm import Dag, build_scm, generate_dag


def fd_gradient(f, x, h=1e-3):
    """Fourth-order central differences of a scalar function, one axis at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def random_scm(d, seed, edge_prob=0.5, cm=1.0):
    rng = np.random.default_rng(seed)
    dag = generate_dag(d, edge_prob, rng)
    return build_scm(dag, cm, rng=rng)


@pytest.fixture
def chain3():
    rng = np.random.default_rng(3)
    return build_scm(Dag(3, [(0, 1), (1, 2)]), 2.0, rng=rng)
