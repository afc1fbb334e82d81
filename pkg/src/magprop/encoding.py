"""Weight-free per-edge magnetic potentials and the spectral q-selection rules."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DegreeStats, Digraph, MotifStats, compute_degrees, compute_motifs
from .magnetic import Q_MAX, EdgePhaseAssignment, PairSet

log = logging.getLogger(__name__)

Q0 = 0.25


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class CentralityVectors:
    gc: np.ndarray
    lc: np.ndarray


@dataclass(frozen=True)
class QComponents:
    q_topo: np.ndarray
    q_feat: np.ndarray
    q_star: np.ndarray

    def phases(self, pairs: PairSet) -> EdgePhaseAssignment:
        return EdgePhaseAssignment(pairs, self.q_star)


def global_centrality(deg: DegreeStats, m: int | None = None, *, literal: bool = False) -> np.ndarray:
    """Degree entropy over forward and reverse walks.

    Uses augmented degrees and, by default, the augmented edge count.  The
    returned value is ``-(p_in log p_in + p_out log p_out)`` (non-negative);
    ``literal=True`` gives the un-negated ``p log p`` sum.
    """
    if m is None:
        m = deg.m_aug
    p_in = deg.d_in_aug / m
    p_out = deg.d_out_aug / m
    s = p_in * np.log(p_in) + p_out * np.log(p_out)
    return s if literal else -s


def centralities(g: Digraph, deg: DegreeStats | None = None, motifs: MotifStats | None = None,
                 *, literal: bool = False) -> CentralityVectors:
    deg = deg if deg is not None else compute_degrees(g)
    motifs = motifs if motifs is not None else compute_motifs(g, deg)
    return CentralityVectors(gc=global_centrality(deg, literal=literal), lc=motifs.cluster_coeff)


def tanh_mean_norm(x) -> np.ndarray:
    """``tanh(x / mean(x))``; a zero mean maps everything to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    mean = x.mean()
    if mean == 0:
        return np.zeros_like(x)
    return np.tanh(x / mean)


def pair_sums(values: np.ndarray, pairs: PairSet) -> np.ndarray:
    return values[pairs.u] + values[pairs.v]


def q_topology(cent: CentralityVectors, pairs: PairSet) -> np.ndarray:
    s = pair_sums(cent.gc, pairs) + pair_sums(cent.lc, pairs)
    return tanh_mean_norm(s)


def q_feature(z, pairs: PairSet, stats: Counter | None = None) -> np.ndarray:
    """Angle between embedding rows scaled to [0, 1]; cosine clamped to [0, 1].

    Pairs touching a zero row get cosine 1 (``q_feat = 0``) and are counted
    under ``stats["zero_norm_pairs"]``.
    """
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    nu, nv = norms[pairs.u], norms[pairs.v]
    dots = np.einsum("ij,ij->i", z[pairs.u], z[pairs.v])
    zero = (nu == 0) | (nv == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(zero, 1.0, dots / np.where(zero, 1.0, nu * nv))
    if stats is not None:
        stats["zero_norm_pairs"] += int(zero.sum())
    cos = np.clip(cos, 0.0, 1.0)
    return np.clip(2.0 / np.pi * np.arccos(cos), 0.0, 1.0)


def assemble_q_star(q_topo, q_feat) -> QComponents:
    q_topo = np.asarray(q_topo, dtype=np.float64)
    q_feat = np.asarray(q_feat, dtype=np.float64)
    if q_topo.shape != q_feat.shape:
        raise EncodingError("q_topo and q_feat differ in length")
    for name, q in (("q_topo", q_topo), ("q_feat", q_feat)):
        if q.size and (not np.all(np.isfinite(q)) or q.min() < 0 or q.max() > 1):
            raise EncodingError(f"{name} outside [0, 1]")
    return QComponents(q_topo=q_topo, q_feat=q_feat, q_star=Q0 * q_topo * q_feat)


def map_encode(g: Digraph, z=None, pairs: PairSet | None = None,
               cent: CentralityVectors | None = None) -> QComponents:
    """Weight-free encoding; without embeddings ``q_feat`` is 1 on every pair."""
    pairs = pairs if pairs is not None else PairSet.from_digraph(g)
    cent = cent if cent is not None else centralities(g)
    qt = q_topology(cent, pairs)
    qf = np.ones(len(pairs)) if z is None else q_feature(z, pairs)
    return assemble_q_star(qt, qf)


def q_baseline_edges(g: Digraph, q_rel: float) -> float:
    """Relative potential divided by the directed-path-length bound ``max(min(m_dir, n), 1)``."""
    if q_rel <= 0:
        raise EncodingError("q_rel must be positive")
    m_dir = int(np.count_nonzero(~g.has_edge(g.dst, g.src)))
    d_g = max(min(m_dir, g.n), 1)
    return float(min(max(q_rel / d_g, 0.0), Q_MAX))


def q_baseline_ring(k: int) -> float:
    """``1 / k`` for ring length ``k``, clamped to the unsigned range [0, 1/4]."""
    if k < 3:
        raise EncodingError("ring length must be at least 3")
    q = 1.0 / k
    if q > Q_MAX:
        log.warning("ring rule gives q=1/%d > 1/4; clamped to 1/4", k)
        q = Q_MAX
    return q


def mean_symmetric_degree(g: Digraph) -> float:
    return 2.0 * len(PairSet.from_digraph(g)) / g.n


def q_baseline_perturbation(g: Digraph | None, epsilon: float, *, mean_degree: float | None = None) -> float:
    """Upper end of the eigenvalue-tolerance interval ``arccos(1 - 2 eps / <d>) / (2 pi)``."""
    d = mean_degree if mean_degree is not None else mean_symmetric_degree(g)
    if not 0 < epsilon <= d / 2:
        raise EncodingError(f"epsilon must lie in (0, <d>/2] with <d>={d:g}")
    return math.acos(1.0 - 2.0 * epsilon / d) / (2.0 * math.pi)


def q_summary(q) -> dict:
    q = np.asarray(q)
    if q.size == 0:
        return {"min": 0.0, "mean": 0.0, "max": 0.0}
    return {"min": float(q.min()), "mean": float(q.mean()), "max": float(q.max())}


def write_q_tsv(path, pairs: PairSet, comps: QComponents, node_ids=None) -> None:
    ids = np.arange(pairs.n) if node_ids is None else np.asarray(node_ids)
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write("u\tv\tq_topo\tq_feat\tq_star\n")
        for k in range(len(pairs)):
            u, v = pairs.u[k], pairs.v[k]
            if pairs.sign[k] < 0:
                u, v = v, u
            fh.write(f"{ids[u]}\t{ids[v]}\t{float(comps.q_topo[k])!r}\t{float(comps.q_feat[k])!r}\t"
                     f"{float(comps.q_star[k])!r}\n")
