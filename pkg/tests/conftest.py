import numpy as np
import pytest
from hypothesis import strategies as st

from magprop.graph import Digraph


def random_digraph(n, density, seed, *, f=3, bidirected=0.2):
    """Erdos-Renyi style digraph with a fraction of reciprocated edges."""
    rng = np.random.default_rng(seed)
    a = (rng.random((n, n)) < density).astype(np.int64)
    np.fill_diagonal(a, 0)
    recip = np.triu(rng.random((n, n)) < bidirected, 1)
    a = a | (recip & (a.T > 0)).T | (recip & (a > 0)).T
    src, dst = np.nonzero(a)
    x = rng.normal(size=(n, f))
    return Digraph(n=n, src=src, dst=dst, features=x)


def from_edges(n, edges, f=2, **kw):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return Digraph(n=n, src=edges[:, 0], dst=edges[:, 1], features=np.ones((n, f)), **kw)


@st.composite
def digraphs(draw, min_n=1, max_n=25):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    density = draw(st.floats(0.0, 0.6))
    return random_digraph(n, density, seed)


def dense_adj(g):
    a = np.zeros((g.n, g.n))
    a[g.src, g.dst] = 1.0
    return a


@pytest.fixture
def tiny_labeled():
    from magprop.graph import generate_synthetic
    return generate_synthetic(120, 4, 0.3, 3, 8, 0, feature_noise=1.0, train_per_class=10)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
