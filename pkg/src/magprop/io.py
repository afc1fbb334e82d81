"""File formats: edge lists, feature containers, labels, split specs."""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Digraph, GraphError, IngestReport, class_balanced_split

log = logging.getLogger(__name__)

# magic (8 bytes) | u64 n | u64 f | row-major payload
MAGIC_F32 = b"MAGFEAT1"
MAGIC_F64 = b"MAGFEAT2"
_HEADER = struct.Struct("<8sQQ")


class IngestError(ValueError):
    """Malformed or inconsistent input file."""


class ShapeError(IngestError):
    """Edge list and feature matrix disagree on the node count."""


@dataclass(frozen=True)
class SplitSpec:
    """Either explicit mask files or per-class/val/test counts drawn with ``seed``."""

    train_per_class: int | None = None
    val: int | None = None
    test: int | None = None
    seed: int = 0
    train_file: Path | None = None
    val_file: Path | None = None
    test_file: Path | None = None

    @property
    def explicit(self) -> bool:
        return self.train_file is not None


def write_features(path, x, *, precision: str = "f32") -> None:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    magic, dtype = (MAGIC_F32, "<f4") if precision == "f32" else (MAGIC_F64, "<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, x.shape[0], x.shape[1]))
        fh.write(np.ascontiguousarray(x, dtype=dtype).tobytes())


def read_features(path) -> np.ndarray:
    """Read a binary container or a CSV file whose first row is ``n,f``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) == _HEADER.size and head[:8] in (MAGIC_F32, MAGIC_F64):
            magic, n, f = _HEADER.unpack(head)
            dtype = "<f4" if magic == MAGIC_F32 else "<f8"
            payload = fh.read()
            expected = n * f * np.dtype(dtype).itemsize
            if len(payload) != expected:
                raise ShapeError(f"{path}: header declares ({n}, {f}) but payload has {len(payload)} bytes")
            return np.frombuffer(payload, dtype=dtype).reshape(n, f).astype(np.float64)
    return _read_features_csv(path)


def _read_features_csv(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
            n, f = int(header[0]), int(header[1])
        except (StopIteration, ValueError, IndexError):
            raise IngestError(f"{path}: first row must be 'n,f'") from None
        x = np.zeros((n, f), dtype=np.float64)
        count = 0
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if count >= n:
                raise ShapeError(f"{path}:{lineno}: more than {n} feature rows")
            if len(row) != f:
                raise ShapeError(f"{path}:{lineno}: expected {f} values, got {len(row)}")
            x[count] = [float(v) for v in row]
            count += 1
    if count != n:
        raise ShapeError(f"{path}: header declares {n} rows, found {count}")
    return x


def write_features_csv(path, x) -> None:
    x = np.asarray(x, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([x.shape[0], x.shape[1]])
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def _parse_id(token: str, path, lineno: int, n: int, id_base: int) -> int:
    try:
        node = int(token)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: node id {token!r} is not an integer") from None
    idx = node - id_base
    if not 0 <= idx < n:
        raise IngestError(f"{path}:{lineno}: node id {node} not among the {n} feature rows")
    return idx


def read_edges(path, n: int, id_base: int = 0):
    """Parse a ``src<TAB>dst`` file; returns dense-index arrays and the ingest report."""
    seen: set[tuple[int, int]] = set()
    src, dst = [], []
    dups = loops = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise IngestError(f"{path}:{lineno}: expected 'src<TAB>dst'")
            u = _parse_id(parts[0], path, lineno, n, id_base)
            v = _parse_id(parts[1], path, lineno, n, id_base)
            if u == v:
                loops += 1
                continue
            if (u, v) in seen:
                dups += 1
                continue
            seen.add((u, v))
            src.append(u)
            dst.append(v)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), IngestReport(dups, loops)


def read_labels(path, n: int, id_base: int = 0) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise IngestError(f"{path}:{lineno}: expected 'node<TAB>class'")
            idx = _parse_id(parts[0], path, lineno, n, id_base)
            labels[idx] = int(parts[1])
    if np.any(labels < 0):
        missing = int(np.flatnonzero(labels < 0)[0]) + id_base
        raise IngestError(f"{path}: no label for node {missing}")
    return labels


def read_mask(path, n: int, id_base: int = 0) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if line:
                mask[_parse_id(line, path, lineno, n, id_base)] = True
    return mask


def ingest_graph(edge_path, feature_path, label_path=None, split: SplitSpec | None = None,
                 *, id_base: int = 0) -> Digraph:
    """Build a validated :class:`Digraph` from files.

    Node ids ``id_base .. id_base + n - 1`` address feature rows in order.
    Duplicate edges and self-loops are dropped and counted in ``g.report``.
    """
    for p in (edge_path, feature_path, label_path):
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(str(p))
    x = read_features(feature_path)
    n = x.shape[0]
    src, dst, report = read_edges(edge_path, n, id_base)
    if report.duplicates or report.self_loops:
        log.info("ingest dropped %d duplicate edges and %d self-loops",
                 report.duplicates, report.self_loops)
    labels = read_labels(label_path, n, id_base) if label_path is not None else None
    train = val = test = None
    if split is not None:
        if split.explicit:
            train = read_mask(split.train_file, n, id_base)
            val = read_mask(split.val_file, n, id_base) if split.val_file else None
            test = read_mask(split.test_file, n, id_base) if split.test_file else None
        else:
            if labels is None:
                raise IngestError("count-based splits need a label file")
            train, val, test = class_balanced_split(labels, split.train_per_class or 20,
                                                    split.val or 0, split.test, split.seed)
    try:
        return Digraph(n=n, src=src, dst=dst, features=x, labels=labels, train_mask=train,
                       val_mask=val, test_mask=test,
                       node_ids=np.arange(n, dtype=np.int64) + id_base, report=report)
    except GraphError as exc:
        raise IngestError(str(exc)) from exc


def write_graph(g: Digraph, directory, *, precision: str = "f32") -> dict:
    """Serialize ``g`` so that :func:`ingest_graph` reproduces it.

    Returns the keyword arguments to pass back to ``ingest_graph``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = g.node_ids
    base = int(ids[0]) if g.n else 0
    if not np.array_equal(ids, np.arange(g.n) + base):
        raise IngestError("only contiguous node ids can be serialized")
    with open(directory / "edges.tsv", "w", encoding="utf-8") as fh:
        for u, v in zip(g.src, g.dst):
            fh.write(f"{ids[u]}\t{ids[v]}\n")
    write_features(directory / "features.bin", g.features, precision=precision)
    kw = {"edge_path": directory / "edges.tsv", "feature_path": directory / "features.bin",
          "id_base": base}
    if g.labels is not None:
        with open(directory / "labels.tsv", "w", encoding="utf-8") as fh:
            for i, c in enumerate(g.labels):
                fh.write(f"{ids[i]}\t{c}\n")
        kw["label_path"] = directory / "labels.tsv"
    files = {}
    for name in ("train", "val", "test"):
        mask = getattr(g, f"{name}_mask")
        if mask is not None:
            path = directory / f"{name}.txt"
            path.write_text("".join(f"{ids[i]}\n" for i in np.flatnonzero(mask)), encoding="utf-8")
            files[f"{name}_file"] = path
    if files:
        kw["split"] = SplitSpec(**files)
    return kw


def load_npz_graph(path) -> Digraph:
    """Load a citation graph stored in the common ``adj_*/attr_*/labels`` npz layout
    (the format CoraML and CiteSeer are distributed in)."""
    import scipy.sparse as sp

    with np.load(path, allow_pickle=True) as z:
        adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]),
                            shape=tuple(z["adj_shape"]))
        if "attr_data" in z:
            attr = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]),
                                 shape=tuple(z["attr_shape"])).toarray()
        else:
            attr = np.asarray(z["attr_matrix"])
        labels = np.asarray(z["labels"], dtype=np.int64)
    adj = adj.tocoo()
    keep = adj.row != adj.col
    codes = np.unique(adj.row[keep].astype(np.int64) * adj.shape[0] + adj.col[keep])
    n = adj.shape[0]
    return Digraph(n=n, src=codes // n, dst=codes % n, features=attr, labels=labels)
