"""Trainable pieces of the decoupled magnetic backbone, with hand-written backprop.

Parameter groups
----------------
edge_mag   2 -> h -> 1 perceptron (tanh hidden, sigmoid output scaled by 1/4)
att        (K+1)*2f -> h -> (K+1) scorer for the per-node step weights
update     2f -> c linear map producing class logits
link       4f -> c_link linear map over concatenated endpoint embeddings

Complex propagated features enter every layer as ``[real | imag]`` planes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .encoding import Q0, tanh_mean_norm
from .magnetic import PhaseLayout, PropagationStack

CHECKPOINT_VERSION = "magprop-state-1"


class NumericError(FloatingPointError):
    pass


class ShapeMismatch(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ModelState:
    params: dict
    K: int
    f: int
    moments: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    def copy(self) -> "ModelState":
        return ModelState(
            params={k: v.copy() for k, v in self.params.items()}, K=self.K, f=self.f,
            moments={k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()},
            step=self.step, epoch=self.epoch,
        )

    def save(self, path) -> None:
        arrays = {f"p:{k}": v for k, v in self.params.items()}
        for k, (m, v) in self.moments.items():
            arrays[f"m:{k}"] = m
            arrays[f"v:{k}"] = v
        meta = np.array([self.K, self.f, self.step, self.epoch], dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, __version__=np.array(CHECKPOINT_VERSION), __meta__=meta, **arrays)

    @classmethod
    def load(cls, path) -> "ModelState":
        with np.load(Path(path), allow_pickle=False) as z:
            version = str(z["__version__"]) if "__version__" in z.files else None
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version!r}")
            K, f, step, epoch = (int(x) for x in z["__meta__"])
            params, ms, vs = {}, {}, {}
            for key in z.files:
                kind, _, name = key.partition(":")
                if kind == "p":
                    params[name] = z[key].copy()
                elif kind == "m":
                    ms[name] = z[key].copy()
                elif kind == "v":
                    vs[name] = z[key].copy()
        moments = {k: (ms[k], vs[k]) for k in ms}
        return cls(params=params, K=K, f=f, moments=moments, step=step, epoch=epoch)


def init_state(f: int, num_classes: int, K: int, *, seed: int = 0, att_hidden: int = 8,
               edge_hidden: int = 8, link_classes: int = 0) -> ModelState:
    rng = np.random.default_rng(seed)
    width = (K + 1) * 2 * f
    p = {
        "edge_w1": _glorot(rng, 2, edge_hidden),
        "edge_b1": np.zeros(edge_hidden),
        "edge_w2": _glorot(rng, edge_hidden, 1),
        "edge_b2": np.zeros(1),
        "att_w1": _glorot(rng, width, att_hidden),
        "att_b1": np.zeros(att_hidden),
        "att_w2": _glorot(rng, att_hidden, K + 1),
        "att_b2": np.zeros(K + 1),
    }
    if num_classes:
        p["upd_w"] = _glorot(rng, 2 * f, num_classes)
        p["upd_b"] = np.zeros(num_classes)
    if link_classes:
        p["link_w"] = _glorot(rng, 4 * f, link_classes)
        p["link_b"] = np.zeros(link_classes)
    return ModelState(params=p, K=K, f=f)


# ---------------------------------------------------------------- Edge-Mag

def edge_mag_inputs(gc_pair, lc_pair, q_feat_pair) -> np.ndarray:
    """Two per-pair columns, each passed through the tanh-of-mean-ratio norm."""
    gc_pair, lc_pair, q_feat_pair = (np.asarray(a, dtype=np.float64)
                                     for a in (gc_pair, lc_pair, q_feat_pair))
    for name, a in (("gc", gc_pair), ("lc", lc_pair), ("q_feat", q_feat_pair)):
        bad = np.flatnonzero(~np.isfinite(a))
        if bad.size:
            raise NumericError(f"non-finite {name} input at pair {bad[0]}")
    return np.column_stack([tanh_mean_norm(gc_pair * q_feat_pair),
                            tanh_mean_norm(lc_pair * q_feat_pair)])


def edge_mag_forward(state: ModelState, x: np.ndarray):
    p = state.params
    hid = np.tanh(x @ p["edge_w1"] + p["edge_b1"])
    s = sigmoid(hid @ p["edge_w2"] + p["edge_b2"])[:, 0]
    return Q0 * s, (x, hid, s)


def edge_mag_backward(state: ModelState, cache, dq: np.ndarray) -> dict:
    p = state.params
    x, hid, s = cache
    dout = (dq * Q0 * s * (1.0 - s))[:, None]
    dhid = (dout @ p["edge_w2"].T) * (1.0 - hid ** 2)
    return {
        "edge_w2": hid.T @ dout,
        "edge_b2": dout.sum(axis=0),
        "edge_w1": x.T @ dhid,
        "edge_b1": dhid.sum(axis=0),
    }


# ---------------------------------------------------------------- attention

def stack_planes(stack: PropagationStack) -> list:
    return [np.hstack([s.real, s.imag]) for s in stack.steps]


def attention_aggregate(state: ModelState, planes: list, *, uniform: bool = False):
    """Node-wise softmax mixture of propagation steps.

    ``uniform=True`` bypasses the scorer (equal weights), used for checks.
    """
    p = state.params
    L = len(planes)
    if L != state.K + 1 or planes[0].shape[1] != 2 * state.f:
        raise ShapeMismatch(f"stack has {L} steps of width {planes[0].shape[1]}, scorer expects "
                            f"{state.K + 1} steps of width {2 * state.f}")
    n, width = planes[0].shape
    if uniform:
        w = np.full((n, L), 1.0 / L)
        hid = d = None
    else:
        w1 = p["att_w1"]
        pre = p["att_b1"] + sum(c @ w1[l * width:(l + 1) * width] for l, c in enumerate(planes))
        hid = np.tanh(pre)
        e = hid @ p["att_w2"] + p["att_b2"]
        d = sigmoid(e)
        w = softmax(d, axis=1)
    h = np.zeros((n, width))
    for l, c in enumerate(planes):
        h += w[:, l:l + 1] * c
    return h, (planes, hid, d, w)


def attention_backward(state: ModelState, cache, dh: np.ndarray, *, need_planes: bool = False):
    p = state.params
    planes, hid, d, w = cache
    width = planes[0].shape[1]
    dw = np.column_stack([np.einsum("ij,ij->i", dh, c) for c in planes])
    grads = {}
    dplanes = [w[:, l:l + 1] * dh for l in range(len(planes))] if need_planes else None
    if hid is None:
        return grads, dplanes
    dd = w * (dw - np.sum(dw * w, axis=1, keepdims=True))
    de = dd * d * (1.0 - d)
    grads["att_w2"] = hid.T @ de
    grads["att_b2"] = de.sum(axis=0)
    dpre = (de @ p["att_w2"].T) * (1.0 - hid ** 2)
    grads["att_b1"] = dpre.sum(axis=0)
    w1 = p["att_w1"]
    grads["att_w1"] = np.vstack([c.T @ dpre for c in planes])
    if need_planes:
        for l in range(len(planes)):
            dplanes[l] += dpre @ w1[l * width:(l + 1) * width].T
    return grads, dplanes


# ---------------------------------------------------------------- heads

def update_forward(state: ModelState, h: np.ndarray) -> np.ndarray:
    return softmax(h @ state.params["upd_w"] + state.params["upd_b"], axis=1)


def forward(state: ModelState, stack_or_planes, *, uniform: bool = False) -> np.ndarray:
    """Row-stochastic soft labels for every node."""
    planes = (stack_planes(stack_or_planes) if isinstance(stack_or_planes, PropagationStack)
              else stack_or_planes)
    h, _ = attention_aggregate(state, planes, uniform=uniform)
    return update_forward(state, h)


def node_loss_and_grads(state: ModelState, planes: list, labels, mask, *,
                        need_planes: bool = False, uniform: bool = False):
    """Mean cross-entropy over ``mask`` and gradients of every head parameter.

    Returns ``(loss, z, grads, dplanes)``; ``dplanes`` is the gradient w.r.t.
    the ``[real | imag]`` planes when ``need_planes`` is set.
    """
    h, cache = attention_aggregate(state, planes, uniform=uniform)
    p = state.params
    z = update_forward(state, h)
    idx = np.flatnonzero(mask)
    y = np.asarray(labels)[idx]
    loss = -float(np.mean(np.log(np.maximum(z[idx, y], 1e-300))))
    dlogits = np.zeros_like(z)
    dlogits[idx] = z[idx]
    dlogits[idx, y] -= 1.0
    dlogits /= idx.size
    grads = {"upd_w": h.T @ dlogits, "upd_b": dlogits.sum(axis=0)}
    dh = dlogits @ p["upd_w"].T
    g_att, dplanes = attention_backward(state, cache, dh, need_planes=need_planes)
    grads.update(g_att)
    return loss, z, grads, dplanes


def embed(state: ModelState, planes: list, *, uniform: bool = False) -> np.ndarray:
    return attention_aggregate(state, planes, uniform=uniform)[0]


def link_loss_and_grads(state: ModelState, planes: list, pairs: np.ndarray, targets: np.ndarray, *,
                        need_planes: bool = False, uniform: bool = False):
    """Cross-entropy of the linear pair head on ``[H_u | H_v]``."""
    h, cache = attention_aggregate(state, planes, uniform=uniform)
    p = state.params
    width = h.shape[1]
    hu, hv = h[pairs[:, 0]], h[pairs[:, 1]]
    wu, wv = p["link_w"][:width], p["link_w"][width:]
    prob = softmax(hu @ wu + hv @ wv + p["link_b"], axis=1)
    rows = np.arange(targets.size)
    loss = -float(np.mean(np.log(np.maximum(prob[rows, targets], 1e-300))))
    dlog = prob.copy()
    dlog[rows, targets] -= 1.0
    dlog /= targets.size
    grads = {"link_w": np.vstack([hu.T @ dlog, hv.T @ dlog]), "link_b": dlog.sum(axis=0)}
    dh = np.zeros_like(h)
    np.add.at(dh, pairs[:, 0], dlog @ wu.T)
    np.add.at(dh, pairs[:, 1], dlog @ wv.T)
    g_att, dplanes = attention_backward(state, cache, dh, need_planes=need_planes)
    grads.update(g_att)
    return loss, prob, grads, dplanes


def link_scores(state: ModelState, h: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    p = state.params
    width = h.shape[1]
    logits = h[pairs[:, 0]] @ p["link_w"][:width] + h[pairs[:, 1]] @ p["link_w"][width:] + p["link_b"]
    return softmax(logits, axis=1)


# ---------------------------------------------------------------- propagation backprop

def propagation_backward(mgo: sp.csr_array, steps: list, dsteps: list, layout: PhaseLayout,
                         num_pairs: int, *, chunk: int = 4096) -> np.ndarray:
    """Gradient of the loss w.r.t. per-pair ``q_star`` through ``X_k = M X_{k-1}``.

    ``dsteps[k]`` is the complex gradient ``dL/dRe + i dL/dIm`` of step ``k``.
    Entry phases are ``theta = 2 pi q orient``, so ``dM/dtheta = i M``.
    """
    n = mgo.shape[0]
    rows = np.repeat(np.arange(n), np.diff(mgo.indptr))
    cols = mgo.indices
    g_entries = np.zeros(mgo.nnz, dtype=np.complex128)
    mh = sp.csr_array(mgo.conj().T)
    grad = dsteps[-1].copy()
    for k in range(len(steps) - 1, 0, -1):
        prev = steps[k - 1]
        for a in range(0, mgo.nnz, chunk):
            b = min(a + chunk, mgo.nnz)
            g_entries[a:b] += np.einsum("ij,ij->i", grad[rows[a:b]], prev[cols[a:b]].conj())
        grad = dsteps[k - 1] + mh @ grad
    m = mgo.data
    dtheta = -g_entries.real * m.imag + g_entries.imag * m.real
    valid = layout.pair >= 0
    return np.bincount(layout.pair[valid], weights=(2.0 * np.pi * dtheta * layout.orient)[valid],
                       minlength=num_pairs)


def planes_to_complex(dplanes: list, f: int) -> list:
    return [d[:, :f] + 1j * d[:, f:] for d in dplanes]


# ---------------------------------------------------------------- optimizer

def adam_step(state: ModelState, grads: dict, *, lr: float = 1e-2, weight_decay: float = 5e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update with L2 weight decay added to the gradient."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        param = state.params[name]
        g = g + weight_decay * param
        m, v = state.moments.get(name, (np.zeros_like(param), np.zeros_like(param)))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.moments[name] = (m, v)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        param -= lr * mhat / (np.sqrt(vhat) + eps)
