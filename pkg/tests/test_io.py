import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_digraph
from magprop.graph import generate_synthetic
from magprop.io import (IngestError, ShapeError, SplitSpec, ingest_graph, load_npz_graph,
                        read_features, write_features, write_features_csv, write_graph)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_duplicates_dropped(tmp_path):
    e = _write(tmp_path, "e.tsv", "1\t2\n2\t3\n1\t2\n")
    x = tmp_path / "x.bin"
    write_features(x, np.ones((3, 2)))
    g = ingest_graph(e, x, id_base=1)
    assert g.m == 2 and g.n == 3
    assert g.report.duplicates == 1
    assert g.node_ids.tolist() == [1, 2, 3]


def test_empty_edge_file(tmp_path):
    e = _write(tmp_path, "e.tsv", "")
    x = tmp_path / "x.bin"
    write_features(x, np.zeros((4, 3)))
    g = ingest_graph(e, x)
    assert g.m == 0 and g.n == 4


def test_dangling_node_names_line(tmp_path):
    e = _write(tmp_path, "e.tsv", "0\t1\n0\t7\n")
    x = tmp_path / "x.bin"
    write_features(x, np.zeros((5, 2)))
    with pytest.raises(IngestError, match=r"e\.tsv:2"):
        ingest_graph(e, x)


def test_self_loops_counted(tmp_path):
    e = _write(tmp_path, "e.tsv", "0\t0\n0\t1\n")
    x = tmp_path / "x.bin"
    write_features(x, np.zeros((2, 2)))
    g = ingest_graph(e, x)
    assert g.m == 1 and g.report.self_loops == 1


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_graph(tmp_path / "nope.tsv", tmp_path / "x.bin")


def test_feature_shape_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    write_features(bad, np.ones((3, 2)))
    bad.write_bytes(bad.read_bytes()[:-4])
    with pytest.raises(ShapeError):
        read_features(bad)
    csv = _write(tmp_path, "x.csv", "2,2\n1,2\n3\n")
    with pytest.raises(ShapeError):
        read_features(csv)


@pytest.mark.parametrize("precision", ["f32", "f64"])
def test_feature_roundtrip(tmp_path, precision):
    x = np.random.default_rng(0).normal(size=(6, 4))
    write_features(tmp_path / "x.bin", x, precision=precision)
    y = read_features(tmp_path / "x.bin")
    np.testing.assert_allclose(y, x, rtol=1e-6 if precision == "f32" else 0)
    write_features_csv(tmp_path / "x.csv", x)
    np.testing.assert_array_equal(read_features(tmp_path / "x.csv"), x)


def test_ingest_idempotent(tmp_path):
    g = generate_synthetic(60, 3, 0.5, 3, 4, 1, train_per_class=5)
    kw = write_graph(g, tmp_path / "a", precision="f64")
    h = ingest_graph(**kw)
    kw2 = write_graph(h, tmp_path / "b", precision="f64")
    k = ingest_graph(**kw2)
    for a, b in ((g, h), (h, k)):
        np.testing.assert_array_equal(a.src, b.src)
        np.testing.assert_array_equal(a.dst, b.dst)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.train_mask, b.train_mask)
        np.testing.assert_array_equal(a.test_mask, b.test_mask)
    assert (tmp_path / "a" / "edges.tsv").read_bytes() == (tmp_path / "b" / "edges.tsv").read_bytes()


def test_count_split(tmp_path):
    g = generate_synthetic(90, 3, 0.5, 3, 4, 1)
    kw = write_graph(g.replace(train_mask=None, val_mask=None, test_mask=None), tmp_path)
    kw["split"] = SplitSpec(train_per_class=5, val=20, test=None, seed=3)
    h = ingest_graph(**kw)
    assert h.train_mask.sum() == 15 and h.val_mask.sum() == 20 and h.test_mask.sum() == 55


def test_load_npz(tmp_path):
    g = random_digraph(12, 0.3, 0, f=5)
    adj = sp.csr_matrix((np.ones(g.m), (g.src, g.dst)), shape=(g.n, g.n))
    attr = sp.csr_matrix(g.features)
    np.savez(tmp_path / "g.npz", adj_data=adj.data, adj_indices=adj.indices, adj_indptr=adj.indptr,
             adj_shape=adj.shape, attr_data=attr.data, attr_indices=attr.indices,
             attr_indptr=attr.indptr, attr_shape=attr.shape, labels=np.arange(12) % 3)
    h = load_npz_graph(tmp_path / "g.npz")
    np.testing.assert_array_equal(h.src, g.src)
    np.testing.assert_array_equal(h.dst, g.dst)
    np.testing.assert_allclose(h.features, g.features)
