"""Training loops for node classification and the three link tasks."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from . import model as M
from .encoding import Q0, centralities, pair_sums, q_feature, q_summary, q_topology
from .graph import Digraph, compute_degrees, compute_motifs
from .magnetic import (EdgePhaseAssignment, PairSet, assemble_star_mgo, build_symmetric_norm,
                       phase_layout, propagate)

log = logging.getLogger(__name__)

MODES = ("MAP", "MAP++", "fixed")
TASKS = ("node_c", "link_exist", "link_direct", "link_3class")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass
class TrainConfig:
    K: int = 3
    epochs: int = 200
    re_encode_every: int = 10
    lr: float = 1e-2
    weight_decay: float = 5e-4
    seed: int = 0
    mode: str = "MAP++"
    task: str = "node_c"
    q: float = 0.0
    patience: int = 50
    att_hidden: int = 8
    edge_hidden: int = 8
    attention: bool = True
    cache_stack: bool = True
    link_val_fraction: float = 0.05
    link_test_fraction: float = 0.15

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.re_encode_every < 1:
            raise ConfigError("re_encode_every must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not 0.0 <= self.q <= Q0:
            raise ConfigError("fixed q must lie in [0, 1/4]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


class Encoder:
    """Topology pre-processing shared by all epochs: pairs, normalized operator,
    centralities and the phase layout."""

    def __init__(self, g: Digraph):
        self.g = g
        self.pairs = PairSet.from_digraph(g)
        self.norm = build_symmetric_norm(g)
        self.layout = phase_layout(self.norm, self.pairs)
        deg = compute_degrees(g)
        self.cent = centralities(g, deg, compute_motifs(g, deg))
        self.q_topo = q_topology(self.cent, self.pairs)
        self.gc_pair = pair_sums(self.cent.gc, self.pairs)
        self.lc_pair = pair_sums(self.cent.lc, self.pairs)

    def operator(self, q_star):
        return assemble_star_mgo(self.norm, EdgePhaseAssignment(self.pairs, q_star), self.layout)

    def propagate(self, q_star, K: int):
        mgo = self.operator(q_star)
        return mgo, propagate(mgo, self.g.features, K)


@dataclass
class TrainResult:
    state: M.ModelState
    log: list
    q_star: np.ndarray | None = None
    stack: object = None
    planes: list | None = None
    encoder: Encoder | None = None
    link_split: object = None
    best_epoch: int = 0

    def __iter__(self):
        yield self.state
        yield self.log


# ---------------------------------------------------------------- metrics

def accuracy(z, labels, mask) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EvaluationError("empty evaluation mask")
    # argmax returns the first maximum: ties go to the lowest class index
    return float(np.mean(np.argmax(z[idx], axis=1) == np.asarray(labels)[idx]))


def predict_node(state: M.ModelState, stack_or_planes, labels, mask, *, uniform: bool = False) -> float:
    z = M.forward(state, stack_or_planes, uniform=uniform)
    return accuracy(z, labels, mask)


def link_metric(task: str, prob: np.ndarray, targets: np.ndarray) -> float:
    if targets.size == 0:
        raise EvaluationError("no evaluation pairs")
    if task == "link_exist":
        return float(roc_auc_score(targets, prob[:, 1]))
    if task == "link_direct":
        return float(average_precision_score(targets, prob[:, 1]))
    return float(np.mean(np.argmax(prob, axis=1) == targets))


def predict_link(state: M.ModelState, stack_or_planes, task: str, pairs, targets, *,
                 uniform: bool = False) -> float:
    """AUC for ``link_exist``, AP for ``link_direct``, accuracy for ``link_3class``."""
    planes = (M.stack_planes(stack_or_planes) if not isinstance(stack_or_planes, list)
              else stack_or_planes)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = planes[0].shape[0]
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise EvaluationError("pair references an unknown node")
    h = M.embed(state, planes, uniform=uniform)
    return link_metric(task, M.link_scores(state, h, pairs), np.asarray(targets, dtype=np.int64))


# ---------------------------------------------------------------- link splits

@dataclass
class LinkSplit:
    graph: Digraph
    train_pairs: np.ndarray
    train_targets: np.ndarray
    val_pairs: np.ndarray
    val_targets: np.ndarray
    test_pairs: np.ndarray
    test_targets: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(max(self.train_targets.max(initial=0), self.test_targets.max(initial=0)) + 1)


def _sample_non_edges(g: Digraph, count: int, rng, forbid: set) -> np.ndarray:
    out = []
    while len(out) < count:
        u = rng.integers(0, g.n, size=2 * count + 8)
        v = rng.integers(0, g.n, size=2 * count + 8)
        ok = (u != v) & ~g.has_edge(u, v) & ~g.has_edge(v, u)
        for a, b in zip(u[ok], v[ok]):
            key = (int(min(a, b)), int(max(a, b)))
            if key in forbid:
                continue
            forbid.add(key)
            out.append((int(a), int(b)))
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_link_split(g: Digraph, task: str, val_fraction: float, test_fraction: float,
                    seed: int) -> LinkSplit:
    """Hold out edges for evaluation and remove them from the propagation graph.

    ``link_exist``: held-out edges vs. the same number of uniform non-edges.
    ``link_direct``: one-way edges in both orientations (target 1 = true direction).
    ``link_3class``: 0 = (u,v) in E, 1 = (v,u) in E, 2 = neither.
    """
    rng = np.random.default_rng(seed)
    edges = np.column_stack([g.src, g.dst])
    if task == "link_exist":
        pool = np.arange(g.m)
    else:
        pool = np.flatnonzero(~g.has_edge(g.dst, g.src))
    pool = rng.permutation(pool)
    n_val = int(round(val_fraction * pool.size))
    n_test = int(round(test_fraction * pool.size))
    val_e, test_e, train_e = pool[:n_val], pool[n_val:n_val + n_test], pool[n_val + n_test:]
    keep = np.ones(g.m, dtype=bool)
    keep[val_e] = False
    keep[test_e] = False
    sub = g.replace(src=g.src[keep], dst=g.dst[keep])
    forbid: set = set()

    def build(idx):
        pos = edges[idx]
        if task == "link_exist":
            neg = _sample_non_edges(g, len(idx), rng, forbid)
            pairs = np.vstack([pos, neg])
            targets = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        elif task == "link_direct":
            pairs = np.vstack([pos, pos[:, ::-1]])
            targets = np.concatenate([np.ones(len(pos)), np.zeros(len(pos))])
        else:
            neg = _sample_non_edges(g, len(idx), rng, forbid)
            pairs = np.vstack([pos, pos[:, ::-1], neg])
            targets = np.concatenate([np.zeros(len(pos)), np.ones(len(pos)), np.full(len(neg), 2)])
        return pairs.reshape(-1, 2).astype(np.int64), targets.astype(np.int64)

    vp, vt = build(val_e)
    tp, tt = build(test_e)
    trp, trt = build(train_e)
    return LinkSplit(sub, trp, trt, vp, vt, tp, tt)


# ---------------------------------------------------------------- training

def _initial_q(enc: Encoder, cfg: TrainConfig) -> np.ndarray:
    if cfg.mode == "fixed":
        return np.full(len(enc.pairs), cfg.q)
    # no soft labels before the first re-encoding: q_feat = 1
    return Q0 * enc.q_topo


def train(g: Digraph, cfg: TrainConfig, *, initial_stack=None, on_reencode=None,
          on_epoch=None) -> TrainResult:
    """Run the decoupled magnetic backbone for ``cfg.epochs`` epochs.

    Every ``re_encode_every``-th epoch (MAP / MAP++ modes) the soft labels of
    the current model, with training rows replaced by one-hot ground truth,
    refresh ``q_feat``; the operator is rebuilt and features re-propagated.
    In MAP++ mode the new ``q_star`` comes from Edge-Mag and that epoch's
    loss is back-propagated through the propagation into Edge-Mag.  Other
    epochs reuse the cached stack.  Returns the best-validation state.

    ``initial_stack`` substitutes a precomputed propagation; it is only
    accepted when no re-encoding can happen during the run.
    """
    cfg.validate()
    node_task = cfg.task == "node_c"
    split = None
    if node_task:
        if g.labels is None or g.train_mask is None:
            raise ConfigError("node classification needs labels and a train mask")
        graph = g
        num_classes = g.num_classes
        link_classes = 0
    else:
        split = make_link_split(g, cfg.task, cfg.link_val_fraction, cfg.link_test_fraction, cfg.seed)
        graph = split.graph
        num_classes = 0
        link_classes = 3 if cfg.task == "link_3class" else 2

    enc = Encoder(graph)
    state = M.init_state(graph.num_features, num_classes, cfg.K, seed=cfg.seed,
                         att_hidden=cfg.att_hidden, edge_hidden=cfg.edge_hidden,
                         link_classes=link_classes)
    uniform = not cfg.attention
    q_star = _initial_q(enc, cfg)
    if initial_stack is not None:
        if cfg.mode != "fixed" and cfg.re_encode_every <= cfg.epochs:
            raise ConfigError("a precomputed stack cannot be used when re-encoding is scheduled")
        if initial_stack.K != cfg.K or initial_stack.shape != graph.features.shape:
            raise ConfigError("precomputed stack does not match the graph or K")
        mgo, stack = enc.operator(q_star), initial_stack
    else:
        mgo, stack = enc.propagate(q_star, cfg.K)
    planes = M.stack_planes(stack)
    history: list = []
    best = (-np.inf, state.copy(), q_star, stack, planes, 0)
    stale = 0

    if node_task:
        labels = graph.labels
        train_mask = graph.train_mask
        val_mask = graph.val_mask if graph.val_mask is not None and graph.val_mask.any() else train_mask
        test_mask = graph.test_mask
        onehot = np.eye(num_classes)[labels[train_mask]]

    def loss_grads(planes_, need):
        if node_task:
            return M.node_loss_and_grads(state, planes_, labels, train_mask, need_planes=need,
                                         uniform=uniform)
        return M.link_loss_and_grads(state, planes_, split.train_pairs, split.train_targets,
                                     need_planes=need, uniform=uniform)

    def soft_labels():
        if node_task:
            z = M.forward(state, planes, uniform=uniform)
            z[train_mask] = onehot
            return z
        return M.embed(state, planes, uniform=uniform)

    for epoch in range(1, cfg.epochs + 1):
        reencode = cfg.mode != "fixed" and epoch % cfg.re_encode_every == 0
        edge_cache = None
        if reencode:
            z = soft_labels()
            q_feat = q_feature(z, enc.pairs)
            if cfg.mode == "MAP":
                q_star = Q0 * enc.q_topo * q_feat
            else:
                x = M.edge_mag_inputs(enc.gc_pair, enc.lc_pair, q_feat)
                q_star, edge_cache = M.edge_mag_forward(state, x)
            mgo, stack = enc.propagate(q_star, cfg.K)
            planes = M.stack_planes(stack)
            if on_reencode is not None:
                on_reencode(epoch, z, q_feat, q_star)
        elif not cfg.cache_stack:
            mgo, stack = enc.propagate(q_star, cfg.K)
            planes = M.stack_planes(stack)

        need = edge_cache is not None
        loss, _, grads, dplanes = loss_grads(planes, need)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        if need:
            dsteps = M.planes_to_complex(dplanes, graph.num_features)
            dq = M.propagation_backward(mgo, stack.steps, dsteps, enc.layout, len(enc.pairs))
            grads.update(M.edge_mag_backward(state, edge_cache, dq))
        M.adam_step(state, grads, lr=cfg.lr, weight_decay=cfg.weight_decay)
        state.epoch = epoch

        if node_task:
            z = M.forward(state, planes, uniform=uniform)
            train_acc = accuracy(z, labels, train_mask)
            val_metric = accuracy(z, labels, val_mask)
            test_metric = accuracy(z, labels, test_mask) if test_mask is not None else float("nan")
        else:
            h = M.embed(state, planes, uniform=uniform)
            train_acc = link_metric(cfg.task, M.link_scores(state, h, split.train_pairs), split.train_targets)
            val_metric = link_metric(cfg.task, M.link_scores(state, h, split.val_pairs), split.val_targets)
            test_metric = link_metric(cfg.task, M.link_scores(state, h, split.test_pairs), split.test_targets)
        record = {"epoch": epoch, "loss": loss, "train_acc": train_acc, "val_metric": val_metric,
                  "test_metric": test_metric, "q_stats": q_summary(q_star)}
        history.append(record)
        if on_epoch is not None:
            on_epoch(epoch, state, planes)
        if val_metric > best[0]:
            best = (val_metric, state.copy(), q_star, stack, planes, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best[5])
                break

    _, best_state, best_q, best_stack, best_planes, best_epoch = best
    return TrainResult(state=best_state, log=history, q_star=best_q, stack=best_stack,
                       planes=best_planes, encoder=enc, link_split=split, best_epoch=best_epoch)


def evaluate(result: TrainResult, g: Digraph, cfg: TrainConfig) -> dict:
    """Test/validation metrics of the returned (best-validation) state."""
    uniform = not cfg.attention
    if cfg.task == "node_c":
        out = {"test_metric": predict_node(result.state, result.planes, g.labels, g.test_mask,
                                           uniform=uniform)}
        if g.val_mask is not None and g.val_mask.any():
            out["val_metric"] = predict_node(result.state, result.planes, g.labels, g.val_mask,
                                             uniform=uniform)
        return out
    s = result.link_split
    return {
        "test_metric": predict_link(result.state, result.planes, cfg.task, s.test_pairs,
                                    s.test_targets, uniform=uniform),
        "val_metric": predict_link(result.state, result.planes, cfg.task, s.val_pairs,
                                   s.val_targets, uniform=uniform),
    }


def write_metrics(path, history: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
