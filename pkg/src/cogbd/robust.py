"""Noise-aware robust training of the two-layer GCN classifier."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectionReport, TrainingDiverged
from .graph import Graph, normalized_adjacency
from .kernels import (
    OptimizerState,
    Params,
    adam_step,
    cross_entropy_rows,
    gcn_backward,
    gcn_forward,
    init_params,
    layer,
    softmax,
)

log = logging.getLogger(__name__)

CAP_MODES = ("stop_below_uniform", "clamp_at_logK", "none")


@dataclass
class RobustTrainConfig:
    lam: float = 0.1
    a: float = 2.0
    b: float = 2.0
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden_dim: int = 64
    seed: int = 0
    unlearn_cap: str = "stop_below_uniform"

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.a <= 0 or self.b <= 0:
            raise ValueError("weight exponents a, b must be > 0")
        if self.unlearn_cap not in CAP_MODES:
            raise ValueError(f"unknown unlearn_cap {self.unlearn_cap!r}; choose from {CAP_MODES}")


@dataclass
class RobustClassifier:
    params: Params
    num_classes: int
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)


def node_weights(s: np.ndarray, a: float = 2.0, b: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """``wL = (1 - s)^a`` for supervision, ``wS = s^b`` for unlearning."""
    s = np.asarray(s, dtype=np.float64)
    if ((s < 0) | (s > 1) | np.isnan(s)).any():
        raise ValueError("suspiciousness scores must lie in [0, 1]")
    return (1.0 - s) ** a, s ** b


def _as_index(nodes) -> np.ndarray:
    return np.asarray(sorted(int(v) for v in nodes), dtype=np.int64)


def robust_loss_and_grad(logits: np.ndarray, labels: np.ndarray, v_l, v_s, w_l: np.ndarray,
                         w_s: np.ndarray, lam: float, cap: str = "stop_below_uniform"):
    """Weighted CE over ``v_l`` minus ``lam`` times weighted CE over ``v_s``.

    ``w_l`` / ``w_s`` are per-node arrays over all nodes. Returns
    ``(total, positive_term, negative_term, d_logits)`` where the total is
    ``positive - lam * negative``.
    """
    if cap not in CAP_MODES:
        raise ValueError(f"unknown cap mode {cap!r}")
    v_l, v_s = _as_index(v_l), _as_index(v_s)
    if np.intersect1d(v_l, v_s).size:
        raise ValueError("supervised and suspect node sets overlap")
    used = np.concatenate([v_l, v_s])
    if used.size and (labels[used] < 0).any():
        raise ValueError("a node in the loss has no label")
    n, k = logits.shape
    probs = softmax(logits)
    d_logits = np.zeros_like(logits)

    pos = 0.0
    if v_l.size:
        ce = cross_entropy_rows(probs[v_l], labels[v_l])
        pos = float((w_l[v_l] * ce).sum())
        g = probs[v_l].copy()
        g[np.arange(v_l.size), labels[v_l]] -= 1.0
        d_logits[v_l] += w_l[v_l, None] * g

    neg = 0.0
    if v_s.size:
        ce = cross_entropy_rows(probs[v_s], labels[v_s])
        active = np.ones(v_s.size, dtype=bool)
        if cap == "stop_below_uniform":
            active = probs[v_s, labels[v_s]] > 1.0 / k
            ce = np.where(active, ce, 0.0)
        elif cap == "clamp_at_logK":
            active = ce < math.log(k)
            ce = np.minimum(ce, math.log(k))
        neg = float((w_s[v_s] * ce).sum())
        g = probs[v_s].copy()
        g[np.arange(v_s.size), labels[v_s]] -= 1.0
        coef = -lam * w_s[v_s] * active
        d_logits[v_s] += coef[:, None] * g

    return pos - lam * neg, pos, neg, d_logits


def robust_loss(logits, labels, v_l, v_s, w_l, w_s, lam: float, cap: str = "stop_below_uniform") -> float:
    return robust_loss_and_grad(logits, labels, v_l, v_s, w_l, w_s, lam, cap)[0]


def classifier_shapes(num_features: int, hidden_dim: int, num_classes: int) -> dict:
    return {"gcn1": (num_features, hidden_dim), "gcn2": (hidden_dim, num_classes)}


def classifier_logits(params: Params, adj, x, ax=None):
    return gcn_forward(adj, x, layer(params, "gcn1"), layer(params, "gcn2"), ax=ax)


def classifier_loss_and_grads(params: Params, adj, x, labels, v_l, v_s, w_l, w_s, lam, cap, ax=None):
    tape = classifier_logits(params, adj, x, ax=ax)
    total, pos, neg, d_logits = robust_loss_and_grad(tape.out, labels, v_l, v_s, w_l, w_s, lam, cap)
    g1, g2 = gcn_backward(tape, d_logits, layer(params, "gcn2"))
    grads = {"gcn1.weight": g1.weight, "gcn1.bias": g1.bias, "gcn2.weight": g2.weight, "gcn2.bias": g2.bias}
    return (total, pos, neg), grads


def train_robust(graph: Graph, report: DetectionReport | None, config: RobustTrainConfig) -> RobustClassifier:
    """Full-batch training on the (pruned) graph.

    With a detection report, supervised nodes are the labeled nodes minus the
    suspect targets, weighted by ``(1 - s)^a``; suspect targets enter the
    negated term weighted by ``s^b``. Without a report every labeled node
    has weight one and there is no unlearning term.
    """
    config.validate()
    n = graph.num_nodes
    labeled = np.flatnonzero(graph.labeled_mask)
    if report is None:
        v_s = np.zeros(0, dtype=np.int64)
        w_l = np.ones(n)
        w_s = np.zeros(n)
        lam = 0.0
    else:
        if report.num_nodes != n:
            raise ValueError(f"detection report covers {report.num_nodes} nodes, graph has {n}")
        v_s = _as_index(report.suspect_targets)
        w_l, w_s = node_weights(report.scores, config.a, config.b)
        lam = config.lam
    v_l = np.setdiff1d(labeled, v_s)

    adj = normalized_adjacency(graph)
    x = graph.features
    ax = np.asarray(adj @ x)
    params = init_params(classifier_shapes(graph.num_features, config.hidden_dim, graph.num_classes), config.seed)
    state = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    trace = []
    for epoch in range(config.epochs):
        (total, pos, neg), grads = classifier_loss_and_grads(
            params, adj, x, graph.labels, v_l, v_s, w_l, w_s, lam, config.unlearn_cap, ax=ax)
        if not math.isfinite(total):
            term = "positive" if not math.isfinite(pos) else "negative"
            raise TrainingDiverged(f"robust loss non-finite at epoch {epoch} ({term} term)")
        trace.append((epoch, pos, neg, total))
        params = adam_step(params, grads, state)
    return RobustClassifier(params, graph.num_classes, trace)


def train_vanilla(graph: Graph, config: RobustTrainConfig) -> RobustClassifier:
    """Plain supervised cross-entropy on all labeled nodes."""
    return train_robust(graph, None, config)


def predict(classifier: RobustClassifier, graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class per node (lowest index wins ties) and the probability rows."""
    w = classifier.params["gcn1.weight"]
    if w.shape[0] != graph.num_features:
        raise ValueError(f"classifier expects {w.shape[0]} features, graph has {graph.num_features}")
    logits = classifier_logits(classifier.params, normalized_adjacency(graph), graph.features).out
    return np.argmax(logits, axis=1), softmax(logits)
