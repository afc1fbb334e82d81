import logging
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import digraphs, from_edges, random_digraph
from magprop.encoding import (EncodingError, assemble_q_star, centralities, global_centrality,
                              map_encode, q_baseline_edges, q_baseline_perturbation,
                              q_baseline_ring, q_feature, q_topology, tanh_mean_norm, write_q_tsv)
from magprop.graph import compute_degrees
from magprop.magnetic import PairSet


def test_gc_single_loop_zero():
    g = from_edges(1, [])
    assert global_centrality(compute_degrees(g))[0] == 0.0


def test_gc_three_cycle():
    g = from_edges(3, [(0, 1), (1, 2), (2, 0)])
    gc = global_centrality(compute_degrees(g))
    np.testing.assert_allclose(gc, -2 * (1 / 3) * math.log(1 / 3), rtol=1e-15)
    assert abs(gc[0] - 0.7324) < 1e-4
    lit = global_centrality(compute_degrees(g), literal=True)
    np.testing.assert_array_equal(lit, -gc)


@pytest.mark.parametrize("k", range(2, 11))
def test_gc_star_hub_exceeds_leaves(k):
    # bidirected star plus a disjoint cycle that keeps every d~/m below 1/e
    star = [(0, i) for i in range(1, k + 1)] + [(i, 0) for i in range(1, k + 1)]
    ring = [(k + 1 + j, k + 1 + (j + 1) % (3 * k)) for j in range(3 * k)]
    g = from_edges(4 * k + 1, star + ring)
    deg = compute_degrees(g)
    assert max(deg.d_in_aug.max(), deg.d_out_aug.max()) / deg.m_aug < 1 / math.e
    gc = global_centrality(deg)
    assert np.all(gc[0] > gc[1:k + 1])


def test_q_topo_vertex_transitive():
    g = from_edges(5, [(i, (i + 1) % 5) for i in range(5)])
    qt = q_topology(centralities(g), PairSet.from_digraph(g))
    np.testing.assert_allclose(qt, math.tanh(1.0), rtol=1e-15)


def test_tanh_mean_norm_degenerate():
    assert np.all(tanh_mean_norm(np.zeros(4)) == 0)
    assert tanh_mean_norm(np.zeros(0)).size == 0


def test_q_feature_examples():
    g = from_edges(2, [(0, 1)])
    pairs = PairSet.from_digraph(g)
    assert q_feature(np.array([[0.3, 0.7], [0.3, 0.7]]), pairs)[0] == pytest.approx(0.0, abs=1e-7)
    assert q_feature(np.array([[1.0, 0.0], [0.0, 1.0]]), pairs)[0] == 1.0
    assert q_feature(np.array([[1.0, 0.0], [1.0, 1.0]]), pairs)[0] == pytest.approx(0.5, abs=1e-12)


def test_q_feature_zero_row_counter():
    pairs = PairSet.from_digraph(from_edges(2, [(0, 1)]))
    stats = Counter()
    assert q_feature(np.array([[0.0, 0.0], [1.0, 0.0]]), pairs, stats)[0] == 0.0
    assert stats["zero_norm_pairs"] == 1


def test_assemble_examples():
    c = assemble_q_star(np.ones(4), np.ones(4))
    np.testing.assert_array_equal(c.q_star, 0.25)
    rng = np.random.default_rng(0)
    qt, qf = rng.random(50), rng.random(50)
    c = assemble_q_star(qt, qf)
    for k in range(50):
        assert c.q_star[k] == 0.25 * qt[k] * qf[k]
    with pytest.raises(EncodingError):
        assemble_q_star([1.2], [1.0])
    with pytest.raises(EncodingError):
        assemble_q_star([1.0], [1.0, 0.0])


def test_zero_q_feat_pair_is_undirected():
    g = from_edges(3, [(0, 1), (1, 2)])
    pairs = PairSet.from_digraph(g)
    c = assemble_q_star(q_topology(centralities(g), pairs), np.array([0.0, 1.0]))
    theta = c.phases(pairs).theta
    assert theta[0] == 0.0 and theta[1] != 0.0


# ---------------------------------------------------------------- baselines

def test_baseline_edges():
    bidir = from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1)])
    assert q_baseline_edges(bidir, 0.1) == 0.1
    assert q_baseline_edges(bidir, 3.0) == 0.25
    path = from_edges(10, [(i, i + 1) for i in range(9)])
    assert q_baseline_edges(path, 0.9) == pytest.approx(0.1, rel=1e-15)  # d_G = 9
    five = from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (0, 3), (0, 4), (1, 3)])
    assert q_baseline_edges(five, 1.0) == 0.2  # m_dir = 8, d_G = 5
    with pytest.raises(EncodingError):
        q_baseline_edges(path, 0.0)


def test_baseline_ring(caplog):
    assert q_baseline_ring(4) == 0.25
    assert q_baseline_ring(8) == 0.125
    with caplog.at_level(logging.WARNING):
        assert q_baseline_ring(3) == 0.25
    assert "clamped" in caplog.text
    with pytest.raises(EncodingError):
        q_baseline_ring(2)


def test_baseline_perturbation():
    assert q_baseline_perturbation(None, 1.0, mean_degree=4.0) == pytest.approx(1 / 6, abs=1e-15)
    # eps = <d>/2: arccos(0) / (2 pi), which evaluates to 1/4
    assert q_baseline_perturbation(None, 2.0, mean_degree=4.0) == math.acos(0.0) / (2 * math.pi)
    assert q_baseline_perturbation(None, 1e-12, mean_degree=4.0) < 1e-5
    for eps in (0.0, -1.0, 2.5):
        with pytest.raises(EncodingError):
            q_baseline_perturbation(None, eps, mean_degree=4.0)


# ---------------------------------------------------------------- properties

def _soft(n, c, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(c), size=n)


@given(digraphs(min_n=2))
@settings(max_examples=60, deadline=None)
def test_endpoint_symmetry_and_range(g):
    pairs = PairSet.from_digraph(g)
    z = _soft(g.n, 3, g.m)
    comps = map_encode(g, z, pairs=pairs)
    flipped = PairSet(n=pairs.n, u=pairs.v, v=pairs.u, sign=-pairs.sign)
    cent = centralities(g)
    assert np.array_equal(q_topology(cent, flipped), comps.q_topo)
    assert np.array_equal(q_feature(z, flipped), comps.q_feat)
    assert np.all((comps.q_star >= 0) & (comps.q_star <= 0.25))
    theta = comps.phases(pairs).theta
    assert np.all(np.abs(theta) <= np.pi / 2)
    dense = comps.phases(pairs).dense_theta()
    assert np.array_equal(dense, -dense.T)


@given(digraphs(min_n=2), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_permutation_equivariance(g, seed):
    perm = np.random.default_rng(seed).permutation(g.n)
    h = g.permute(perm)
    z = _soft(g.n, 4, seed)
    zh = np.empty_like(z)
    zh[perm] = z
    a, pa = map_encode(g, z), PairSet.from_digraph(g)
    b, pb = map_encode(h, zh), PairSet.from_digraph(h)
    key_a = {(int(perm[u]), int(perm[v])) if perm[u] < perm[v] else (int(perm[v]), int(perm[u])): k
             for k, (u, v) in enumerate(zip(pa.u, pa.v))}
    for k, (u, v) in enumerate(zip(pb.u, pb.v)):
        j = key_a[(int(u), int(v))]
        assert b.q_star[k] == pytest.approx(a.q_star[j], abs=1e-15)
        assert b.q_topo[k] == pytest.approx(a.q_topo[j], abs=1e-15)


@given(st.floats(0.0, 1.4), st.floats(0.0, 1.4))
@settings(max_examples=100, deadline=None)
def test_monotone_in_cosine(a1, a2):
    g = random_digraph(6, 0.5, 1)
    pairs = PairSet.from_digraph(g)
    if len(pairs) == 0:
        return
    lo, hi = sorted((a1, a2))
    base = _soft(g.n, 2, 0)
    u, v = pairs.u[0], pairs.v[0]

    def q_at(angle):
        z = base.copy()
        z[u] = [1.0, 0.0]
        z[v] = [math.cos(angle), math.sin(angle)]
        return map_encode(g, z, pairs=pairs).q_star[0]

    # larger angle means smaller cosine similarity
    assert q_at(hi) >= q_at(lo)


def test_q_tsv(tmp_path):
    g = random_digraph(8, 0.4, 2)
    pairs = PairSet.from_digraph(g)
    comps = map_encode(g, pairs=pairs)
    write_q_tsv(tmp_path / "q.tsv", pairs, comps, g.node_ids)
    lines = (tmp_path / "q.tsv").read_text().splitlines()
    assert lines[0] == "u\tv\tq_topo\tq_feat\tq_star"
    assert len(lines) == len(pairs) + 1
    u, v, qt, qf, qs = lines[1].split("\t")
    assert float(qs) == comps.q_star[0]
