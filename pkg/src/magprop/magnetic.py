"""Magnetic graph operators and complex-domain feature propagation.

Complex sparse matrices are ``scipy.sparse.csr_array`` objects with
``complex128`` data in canonical (sorted, duplicate-free) CSR form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Digraph
from .io import read_features, write_features

Q_MAX = 0.25


class PhaseRangeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class PairSet:
    """Unordered node pairs ``u < v`` joined by at least one directed edge.

    ``sign[k] = A(u, v) - A(v, u)`` is +1 for u->v only, -1 for v->u only
    and 0 for bidirected pairs.
    """

    n: int
    u: np.ndarray
    v: np.ndarray
    sign: np.ndarray

    @classmethod
    def from_digraph(cls, g: Digraph) -> "PairSet":
        lo = np.minimum(g.src, g.dst)
        hi = np.maximum(g.src, g.dst)
        forward = (g.src < g.dst).astype(np.int64)
        codes = lo * g.n + hi
        uniq, inv = np.unique(codes, return_inverse=True)
        sign = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(sign, inv, 2 * forward - 1)
        return cls(n=g.n, u=uniq // g.n, v=uniq % g.n, sign=sign.astype(np.int8))

    def __len__(self) -> int:
        return int(self.u.size)

    @property
    def directed(self) -> np.ndarray:
        return self.sign != 0


@dataclass(frozen=True, eq=False)
class EdgePhaseAssignment:
    """Per-pair magnetic potential; the phase on entry (u, v) is
    ``2*pi*q*(A(u,v) - A(v,u))`` and its negation on (v, u)."""

    pairs: PairSet
    q_star: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        """Phase of the ``u -> v`` orientation of every pair."""
        return 2.0 * np.pi * self.q_star * self.pairs.sign

    def dense_theta(self) -> np.ndarray:
        n = self.pairs.n
        out = np.zeros((n, n))
        out[self.pairs.u, self.pairs.v] = self.theta
        out[self.pairs.v, self.pairs.u] = -self.theta
        return out

    @classmethod
    def uniform(cls, pairs: PairSet, q: float) -> "EdgePhaseAssignment":
        return cls(pairs, np.full(len(pairs), float(q)))


@dataclass(frozen=True, eq=False)
class PhaseLayout:
    """Map from CSR entries of the normalized operator to pairs.

    ``pair[k]`` is the pair index of entry ``k`` (-1 on the diagonal) and
    ``orient[k]`` is ``+sign`` for the (u, v) entry, ``-sign`` for (v, u).
    """

    pair: np.ndarray
    orient: np.ndarray

    def entry_theta(self, q_star: np.ndarray) -> np.ndarray:
        q = np.concatenate([q_star, [0.0]])
        return 2.0 * np.pi * q[self.pair] * self.orient


@dataclass(eq=False)
class PropagationStack:
    steps: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.steps) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.steps[0].shape


def build_symmetric_norm(g: Digraph) -> sp.csr_array:
    """``D^-1/2 (A_m + I) D^-1/2`` with ``A_m = (A + A^T) / 2``; real and symmetric."""
    a = g.adjacency()
    am = 0.5 * (a + a.T) + sp.eye_array(g.n, format="csr")
    deg = np.asarray(am.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    out = sp.csr_array(sp.diags_array(inv_sqrt) @ am @ sp.diags_array(inv_sqrt))
    out.sum_duplicates()
    out.sort_indices()
    return out


def phase_layout(norm: sp.csr_array, pairs: PairSet) -> PhaseLayout:
    n = norm.shape[0]
    rows = np.repeat(np.arange(n), np.diff(norm.indptr))
    cols = norm.indices.astype(np.int64)
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    pair_codes = pairs.u * n + pairs.v
    pos = np.searchsorted(pair_codes, lo * n + hi)
    pos = np.minimum(pos, max(len(pairs) - 1, 0))
    found = (rows != cols)
    if len(pairs):
        found &= pair_codes[pos] == lo * n + hi
    else:
        found[:] = False
    pair = np.where(found, pos, -1)
    sign = np.where(found, pairs.sign[pos] if len(pairs) else 0, 0)
    orient = np.where(rows < cols, sign, -sign).astype(np.float64)
    return PhaseLayout(pair=pair, orient=orient)


def check_q_range(q_star) -> None:
    q_star = np.asarray(q_star)
    if q_star.size and (not np.all(np.isfinite(q_star)) or q_star.min() < 0 or q_star.max() > Q_MAX):
        bad = np.flatnonzero(~((q_star >= 0) & (q_star <= Q_MAX)))
        raise PhaseRangeError(f"q_star outside [0, 1/4] at {bad.size} pairs (first index {bad[0]})")


def assemble_star_mgo(norm: sp.csr_array, phases: EdgePhaseAssignment,
                      layout: PhaseLayout | None = None) -> sp.csr_array:
    """Entrywise product of ``norm`` with ``exp(i * Theta)``."""
    check_q_range(phases.q_star)
    if layout is None:
        layout = phase_layout(norm, phases.pairs)
    theta = layout.entry_theta(phases.q_star)
    data = norm.data * np.exp(1j * theta)
    return sp.csr_array((data, norm.indices.copy(), norm.indptr.copy()), shape=norm.shape)


def hermitian_defect(h) -> float:
    """``max |H(u,v) - conj(H(v,u))|``."""
    if sp.issparse(h):
        diff = sp.csr_array(h) - sp.csr_array(h).conj().T
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0
    h = np.asarray(h)
    return float(np.abs(h - h.conj().T).max()) if h.size else 0.0


def propagate(mgo, x, K: int) -> PropagationStack:
    """``[X, M X, M^2 X, ..., M^K X]`` with ``X`` promoted to complex."""
    if K < 0:
        raise ValueError("K must be non-negative")
    x = np.asarray(x)
    if x.shape[0] != mgo.shape[0]:
        raise ValueError(f"feature rows {x.shape[0]} != operator size {mgo.shape[0]}")
    cur = x.astype(np.complex128)
    steps = [cur]
    for _ in range(K):
        cur = mgo @ cur
        steps.append(cur)
    return PropagationStack(steps)


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    degenerate: bool = False


def power_iteration_top_eigenvector(h, tol: float = 1e-10, max_iter: int = 20000, *,
                                    seed: int = 0, check_degenerate: bool = True) -> EigenResult:
    """Largest eigenpair of a Hermitian matrix by shifted power iteration.

    The shift ``max_i sum_j |H_ij|`` bounds the spectral radius, so the shifted
    operator is positive semidefinite and its dominant eigenvalue is
    ``lambda_1 + shift``.  The returned vector has squared norm ``n``.
    ``degenerate`` is set when a second random start converges to a different
    direction, i.e. the top eigenvalue is (numerically) repeated.
    """
    n = h.shape[0]
    absrow = np.abs(h).sum(axis=1)
    shift = float(np.max(np.asarray(absrow))) if n else 0.0
    rng = np.random.default_rng(seed)

    def run(v):
        v = v / np.linalg.norm(v)
        res = np.inf
        for it in range(1, max_iter + 1):
            y = h @ v
            lam = float(np.real(np.vdot(v, y)))
            res = float(np.linalg.norm(y - lam * v))
            if res <= tol:
                return lam, v, res, it
            w = y + shift * v
            v = w / np.linalg.norm(w)
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations "
                               f"(residual {res:.3e})", res)

    start = rng.normal(size=n) + 1j * rng.normal(size=n)
    lam, v, res, it = run(start)
    degenerate = False
    if check_degenerate and n > 1:
        lam2, v2, _, _ = run(rng.normal(size=n) + 1j * rng.normal(size=n))
        degenerate = abs(np.vdot(v, v2)) < 1.0 - 1e-6 and abs(lam2 - lam) <= 10 * tol * max(1.0, abs(lam))
    return EigenResult(value=lam, vector=v * np.sqrt(n), residual=res, iterations=it,
                       degenerate=bool(degenerate))


def save_stack(stack: PropagationStack, directory, q_summary: dict | None = None) -> Path:
    """One float64 container per step (``[real | imag]`` columns) plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, f = stack.shape
    files = []
    for k, step in enumerate(stack.steps):
        name = f"step_{k:03d}.bin"
        write_features(directory / name, np.hstack([step.real, step.imag]), precision="f64")
        files.append(name)
    manifest = {"K": stack.K, "n": n, "f": f, "files": files, "q_summary": q_summary or {}}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_stack(directory) -> tuple[PropagationStack, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    f = manifest["f"]
    steps = []
    for name in manifest["files"]:
        planes = read_features(directory / name)
        steps.append(planes[:, :f] + 1j * planes[:, f:])
    return PropagationStack(steps), manifest
