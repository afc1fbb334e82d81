"""Directed graph container, degree and motif statistics, synthetic digraphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised when graph data violates a structural invariant."""


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IngestReport:
    duplicates: int = 0
    self_loops: int = 0


@dataclass(frozen=True, eq=False)
class Digraph:
    """Immutable unweighted digraph with node features, labels and split masks.

    ``src``/``dst`` hold the deduplicated edge list sorted by (src, dst).
    ``node_ids`` maps dense indices back to the ids used in the input files.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    node_ids: np.ndarray | None = None
    report: IngestReport = field(default_factory=IngestReport)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise GraphError("src and dst must be 1-d arrays of equal length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.n):
            raise GraphError("edge endpoint out of range [0, n)")
        if np.any(src == dst):
            raise GraphError("self-loops are not allowed in the raw graph")
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        codes = src * self.n + dst
        if codes.size and np.any(codes[1:] == codes[:-1]):
            raise GraphError("duplicate directed edges")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.n:
            raise GraphError(f"feature matrix has shape {feats.shape}, expected ({self.n}, f)")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.n,):
                raise GraphError("labels must have length n")
            if labels.size and labels.min() < 0:
                raise GraphError("labels must be non-negative")
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=bool)
                if m.shape != (self.n,):
                    raise GraphError(f"{name} must have length n")
            masks.append(m)
        present = [m for m in masks if m is not None]
        for i in range(len(present)):
            for j in range(i + 1, len(present)):
                if np.any(present[i] & present[j]):
                    raise GraphError("split masks must be pairwise disjoint")
        ids = self.node_ids
        if ids is None:
            ids = np.arange(self.n, dtype=np.int64)
        else:
            ids = np.asarray(ids)
            if ids.shape != (self.n,):
                raise GraphError("node_ids must have length n")
        set_ = object.__setattr__
        set_(self, "src", _frozen(src))
        set_(self, "dst", _frozen(dst))
        set_(self, "features", _frozen(feats))
        set_(self, "labels", _frozen(labels))
        set_(self, "train_mask", _frozen(masks[0]))
        set_(self, "val_mask", _frozen(masks[1]))
        set_(self, "test_mask", _frozen(masks[2]))
        set_(self, "node_ids", _frozen(ids))

    @property
    def m(self) -> int:
        return int(self.src.size)

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        if self.labels is None or self.labels.size == 0:
            return 0
        return int(self.labels.max()) + 1

    def adjacency(self) -> sp.csr_array:
        """Unit-weight adjacency ``A`` with ``A[u, v] = 1`` for every edge u->v."""
        data = np.ones(self.m, dtype=np.float64)
        return sp.csr_array((data, (self.src, self.dst)), shape=(self.n, self.n))

    def has_edge(self, u, v) -> np.ndarray:
        """Vectorised membership test for directed edges."""
        codes = self.src * self.n + self.dst
        query = np.asarray(u, dtype=np.int64) * self.n + np.asarray(v, dtype=np.int64)
        pos = np.searchsorted(codes, query)
        pos = np.minimum(pos, max(codes.size - 1, 0))
        if codes.size == 0:
            return np.zeros(np.shape(query), dtype=bool)
        return codes[pos] == query

    def replace(self, **changes) -> "Digraph":
        kw = dict(
            n=self.n, src=self.src, dst=self.dst, features=self.features,
            labels=self.labels, train_mask=self.train_mask, val_mask=self.val_mask,
            test_mask=self.test_mask, node_ids=self.node_ids, report=self.report,
        )
        kw.update(changes)
        return Digraph(**kw)

    def permute(self, perm) -> "Digraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n)

        def _p(a):
            return None if a is None else a[inv]

        return Digraph(
            n=self.n, src=perm[self.src], dst=perm[self.dst], features=self.features[inv],
            labels=_p(self.labels), train_mask=_p(self.train_mask),
            val_mask=_p(self.val_mask), test_mask=_p(self.test_mask),
            node_ids=self.node_ids[inv], report=self.report,
        )


@dataclass(frozen=True)
class DegreeStats:
    """Raw in/out degrees plus the sink self-loops used for the augmented adjacency."""

    d_in: np.ndarray
    d_out: np.ndarray
    sink_loops: frozenset

    @property
    def d(self) -> np.ndarray:
        return self.d_in + self.d_out

    @property
    def loop_mask(self) -> np.ndarray:
        mask = np.zeros(self.d_in.size, dtype=bool)
        mask[list(self.sink_loops)] = True
        return mask

    @property
    def d_in_aug(self) -> np.ndarray:
        return self.d_in + self.loop_mask

    @property
    def d_out_aug(self) -> np.ndarray:
        return self.d_out + self.loop_mask

    @property
    def m_raw(self) -> int:
        return int(self.d_out.sum())

    @property
    def m_aug(self) -> int:
        """Edge count of the augmented adjacency (raw edges plus sink self-loops)."""
        return self.m_raw + len(self.sink_loops)


@dataclass(frozen=True)
class MotifStats:
    motifs: np.ndarray
    cluster_coeff: np.ndarray


def compute_degrees(g: Digraph) -> DegreeStats:
    """Degrees of the raw graph; nodes missing in- or out-edges get a self-loop."""
    d_out = np.bincount(g.src, minlength=g.n).astype(np.int64)
    d_in = np.bincount(g.dst, minlength=g.n).astype(np.int64)
    sinks = np.flatnonzero((d_in == 0) | (d_out == 0))
    return DegreeStats(d_in=d_in, d_out=d_out, sink_loops=frozenset(int(v) for v in sinks))


def augmented_adjacency(g: Digraph, deg: DegreeStats) -> sp.csr_array:
    """``A`` plus unit self-loops on sink nodes."""
    loops = np.array(sorted(deg.sink_loops), dtype=np.int64)
    rows = np.concatenate([g.src, loops])
    cols = np.concatenate([g.dst, loops])
    data = np.ones(rows.size, dtype=np.int64)
    return sp.csr_array((data, (rows, cols)), shape=(g.n, g.n))


def compute_motifs(g: Digraph, deg: DegreeStats) -> MotifStats:
    """Triple-motif counts ``m_v = sum_u (A~^2 * A~^T)_{vu}`` and the clustering ratio.

    Integer sparse arithmetic keeps the counts exact.
    """
    a = augmented_adjacency(g, deg)
    two_step = a @ a
    motifs = np.asarray(two_step.multiply(a.T).sum(axis=1)).ravel().astype(np.int64)
    denom = deg.d_in_aug * deg.d_out_aug
    return MotifStats(motifs=motifs, cluster_coeff=motifs / denom)


def class_balanced_split(labels, train_per_class: int, num_val: int, num_test: int | None,
                         seed: int):
    """Random split with ``train_per_class`` nodes of every class in the train set.

    ``num_test=None`` puts every remaining node in the test set.
    """
    labels = np.asarray(labels)
    n = labels.size
    rng = np.random.default_rng(seed)
    train = np.zeros(n, dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < train_per_class:
            raise GraphError(f"class {c} has only {idx.size} nodes, need {train_per_class}")
        train[rng.choice(idx, size=train_per_class, replace=False)] = True
    rest = rng.permutation(np.flatnonzero(~train))
    if num_test is None:
        num_test = rest.size - num_val
    if num_val + num_test > rest.size:
        raise GraphError("split sizes exceed the number of nodes")
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:num_val]] = True
    test[rest[num_val:num_val + num_test]] = True
    return train, val, test


def generate_synthetic(n: int, avg_degree: float, homophily: float, classes: int,
                       feature_dim: int, seed: int, *, class_sep: float = 1.0,
                       feature_noise: float = 1.0, direction_noise: float = 0.0,
                       train_per_class: int = 20, val_fraction: float = 0.2) -> Digraph:
    """Class-structured random digraph with a tunable same-label edge fraction.

    Each edge joins two nodes of the same class with probability ``homophily``
    (orientation random) and otherwise runs from class ``c`` to class
    ``(c + 1) % classes``, so edge direction carries label information on the
    heterophilic part; ``direction_noise`` is the probability that such an
    edge is reversed.  ``avg_degree`` is the mean out-degree ``m / n``.
    Features are Gaussian around per-class means of norm ``class_sep``.
    """
    if n < 2 or classes < 2:
        raise GraphError("need n >= 2 and classes >= 2")
    if not 0.0 <= homophily <= 1.0:
        raise GraphError("homophily must lie in [0, 1]")
    if avg_degree <= 0 or avg_degree >= n:
        raise GraphError(f"infeasible avg_degree={avg_degree} for n={n}")
    if classes > n:
        raise GraphError("more classes than nodes")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    members = [np.flatnonzero(labels == c) for c in range(classes)]
    if homophily > 0 and min(len(m) for m in members) < 2:
        raise GraphError("same-class edges need at least two nodes per class")

    m_target = int(round(avg_degree * n))
    max_edges = n * (n - 1)
    if m_target > max_edges // 2:
        raise GraphError("avg_degree too large for a simple digraph sampler")
    seen: set[int] = set()
    src_out: list[int] = []
    dst_out: list[int] = []
    while len(src_out) < m_target:
        batch = 2 * (m_target - len(src_out)) + 16
        u = rng.integers(0, n, size=batch)
        same = rng.random(batch) < homophily
        flip = rng.random(batch) < 0.5
        pick = rng.random(batch)
        reverse = rng.random(batch) < direction_noise
        for i in range(batch):
            cu = labels[u[i]]
            if same[i]:
                pool = members[cu]
                v = int(pool[int(pick[i] * len(pool))])
                a, b = (int(u[i]), v) if flip[i] else (v, int(u[i]))
            else:
                pool = members[(cu + 1) % classes]
                a, b = int(u[i]), int(pool[int(pick[i] * len(pool))])
                if reverse[i]:
                    a, b = b, a
            if a == b:
                continue
            code = a * n + b
            if code in seen:
                continue
            seen.add(code)
            src_out.append(a)
            dst_out.append(b)
            if len(src_out) == m_target:
                break

    means = rng.normal(size=(classes, feature_dim))
    means *= class_sep / np.linalg.norm(means, axis=1, keepdims=True)
    feats = means[labels] + feature_noise * rng.normal(size=(n, feature_dim)) / np.sqrt(feature_dim)
    num_val = int(round(val_fraction * n))
    train, val, test = class_balanced_split(labels, min(train_per_class, min(len(m) for m in members) // 2),
                                            num_val, None, seed + 1)
    return Digraph(n=n, src=np.array(src_out), dst=np.array(dst_out), features=feats,
                   labels=labels, train_mask=train, val_mask=val, test_mask=test)


def edge_homophily(g: Digraph) -> float:
    if g.m == 0 or g.labels is None:
        return float("nan")
    return float(np.mean(g.labels[g.src] == g.labels[g.dst]))
