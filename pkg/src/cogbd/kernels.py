"""Dense/sparse kernels with hand-written reverse mode for the fixed two-layer architectures.

Parameters live in flat ``dict[str, ndarray]`` mappings keyed ``"<layer>.weight"``
and ``"<layer>.bias"``; :class:`LayerParams` is the per-layer view used by the
forward/backward functions.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-300

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    pass


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")


def layer(params: Params, name: str) -> LayerParams:
    return LayerParams(params[f"{name}.weight"], params[f"{name}.bias"])


def glorot_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> LayerParams:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero bias."""
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return LayerParams(rng.uniform(-r, r, size=(fan_in, fan_out)), np.zeros(fan_out))


def init_params(shapes: dict[str, tuple[int, int]], seed: int) -> Params:
    """Initialise layers in the insertion order of ``shapes`` from one seeded stream."""
    rng = np.random.default_rng(seed)
    out: Params = {}
    for name, (fi, fo) in shapes.items():
        lp = glorot_layer(fi, fo, rng)
        out[f"{name}.weight"] = lp.weight
        out[f"{name}.bias"] = lp.bias
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_grad(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at exactly zero is 0
    return upstream * (z > 0.0)


def spmm(s: sp.spmatrix, d: np.ndarray) -> np.ndarray:
    """Sparse (CSR) times dense."""
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"inner dimensions differ: {s.shape} @ {d.shape}")
    return np.asarray(s @ d)


def _affine(x: np.ndarray, lp: LayerParams) -> np.ndarray:
    if x.shape[1] != lp.weight.shape[0]:
        raise ShapeError(f"input width {x.shape[1]} does not match weight {lp.weight.shape}")
    return x @ lp.weight + lp.bias


# --------------------------------------------------------------------------- two-layer GCN


@dataclass
class GcnTape:
    adj: sp.spmatrix
    ax: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    ah1: np.ndarray
    out: np.ndarray


def gcn_forward(adj: sp.spmatrix, x: np.ndarray, l1: LayerParams, l2: LayerParams,
                ax: np.ndarray | None = None) -> GcnTape:
    """H = adj · relu(adj · X · W1 + b1) · W2 + b2.

    ``ax`` may carry a precomputed ``adj @ X`` (constant during training).
    The tape exposes the hidden activation ``h1`` and the output ``out``.
    """
    if adj.shape[0] != adj.shape[1] or adj.shape[1] != x.shape[0]:
        raise ShapeError(f"adjacency {adj.shape} incompatible with features {x.shape}")
    if ax is None:
        ax = spmm(adj, x)
    z1 = _affine(ax, l1)
    h1 = relu(z1)
    ah1 = spmm(adj, h1)
    out = _affine(ah1, l2)
    return GcnTape(adj, ax, z1, h1, ah1, out)


def gcn_backward(tape: GcnTape, d_out: np.ndarray, l2: LayerParams) -> tuple[LayerParams, LayerParams]:
    if d_out.shape != tape.out.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} does not match output {tape.out.shape}")
    g2 = LayerParams(tape.ah1.T @ d_out, d_out.sum(axis=0))
    d_ah1 = d_out @ l2.weight.T
    d_h1 = spmm(tape.adj.T.tocsr(), d_ah1)
    d_z1 = relu_grad(tape.z1, d_h1)
    g1 = LayerParams(tape.ax.T @ d_z1, d_z1.sum(axis=0))
    return g1, g2


# --------------------------------------------------------------------------- two-layer MLP


@dataclass
class MlpTape:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    out: np.ndarray


def mlp_forward(x: np.ndarray, l1: LayerParams, l2: LayerParams) -> MlpTape:
    """Y = relu(X · W1 + b1) · W2 + b2."""
    z1 = _affine(x, l1)
    h1 = relu(z1)
    return MlpTape(x, z1, h1, _affine(h1, l2))


def mlp_backward(tape: MlpTape, d_out: np.ndarray, l1: LayerParams, l2: LayerParams):
    """Returns ``(grad_l1, grad_l2, grad_input)``."""
    if d_out.shape != tape.out.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} does not match output {tape.out.shape}")
    g2 = LayerParams(tape.h1.T @ d_out, d_out.sum(axis=0))
    d_z1 = relu_grad(tape.z1, d_out @ l2.weight.T)
    g1 = LayerParams(tape.x.T @ d_z1, d_z1.sum(axis=0))
    return g1, g2, d_z1 @ l1.weight.T


# --------------------------------------------------------------------------- softmax / CE


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[label]`` for one row, plus the probability row."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.size:
        raise IndexError(f"label {label} out of range for {logits.size} classes")
    p = softmax(logits)
    return float(-np.log(max(p[label], PROB_FLOOR))), p


def cross_entropy_rows(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row ``-log p[label]`` from probability rows."""
    picked = probs[np.arange(labels.size), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


# --------------------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return copy.deepcopy(self)


def adam_step(params: Params, grads: Params, state: OptimizerState) -> Params:
    """One Adam update with coupled L2 weight decay; advances ``state`` in place."""
    if params.keys() != grads.keys():
        raise ShapeError("parameter and gradient names differ")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out: Params = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


# --------------------------------------------------------------------------- gradient check


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def numeric_grads(loss_fn: Callable[[Params], float], params: Params, eps: float = 1e-5) -> Params:
    """Central finite differences of ``loss_fn`` for every parameter entry."""
    out: Params = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            probe = {k: v.copy() for k, v in params.items()}
            probe[name][idx] = p[idx] + eps
            f_plus = loss_fn(probe)
            probe[name][idx] = p[idx] - eps
            f_minus = loss_fn(probe)
            g[idx] = (f_plus - f_minus) / (2.0 * eps)
        out[name] = g
    return out


def grad_check(objective: Callable[[Params], tuple[float, Params]], params: Params,
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``objective(params)`` must return ``(loss, grads)``.
    """
    _, analytic = objective(params)
    numeric = numeric_grads(lambda p: objective(p)[0], params, eps)
    worst = 0.0
    for name in params:
        worst = max(worst, float(relative_error(analytic[name], numeric[name]).max(initial=0.0)))
    return worst


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: Params, meta: dict | None = None) -> Path:
    """JSON checkpoint; floats are written with ``repr`` precision so reloads are bit-exact."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()},
    }
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[Params, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    return params, doc.get("meta", {})
