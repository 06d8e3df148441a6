"""Consistency reconstruction model: training, per-node errors, scoring and suspect selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, aggregate, normalized_adjacency, replace_graph
from .kernels import (
    OptimizerState,
    Params,
    adam_step,
    gcn_backward,
    gcn_forward,
    init_params,
    layer,
    mlp_backward,
    mlp_forward,
)

log = logging.getLogger(__name__)

ENCODER = ("enc1", "enc2")
NODE_DECODER = ("decx1", "decx2")
NEIGH_DECODER = ("decm1", "decm2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CrmModel:
    params: Params
    alpha: float = 1.0
    beta: float = 1.0
    aggregation: str = "sum"
    loss_trace: list[float] = field(default_factory=list)

    @property
    def hidden_dim(self) -> int:
        return self.params["enc1.weight"].shape[1]

    @property
    def num_features(self) -> int:
        return self.params["enc1.weight"].shape[0]


def init_crm(num_features: int, hidden_dim: int = 64, alpha: float = 1.0, beta: float = 1.0,
             seed: int = 0, aggregation: str = "sum") -> CrmModel:
    f, d = num_features, hidden_dim
    shapes = {
        "enc1": (f, d), "enc2": (d, d),
        "decx1": (d, d), "decx2": (d, f),
        "decm1": (d, d), "decm2": (d, f),
    }
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return CrmModel(init_params(shapes, seed), alpha, beta, aggregation)


@dataclass
class _CrmPass:
    enc: object
    decx: object
    decm: object

    @property
    def h(self):
        return self.enc.out

    @property
    def x_hat(self):
        return self.decx.out

    @property
    def m_hat(self):
        return self.decm.out


def _forward(params: Params, adj, x, ax=None) -> _CrmPass:
    enc = gcn_forward(adj, x, layer(params, "enc1"), layer(params, "enc2"), ax=ax)
    decx = mlp_forward(enc.out, layer(params, "decx1"), layer(params, "decx2"))
    decm = mlp_forward(enc.out, layer(params, "decm1"), layer(params, "decm2"))
    return _CrmPass(enc, decx, decm)


def crm_forward(model: CrmModel, adj, x: np.ndarray):
    """Returns ``(H, X_hat, M_hat)``."""
    p = _forward(model.params, adj, x)
    return p.h, p.x_hat, p.m_hat


def _row_errors(x, m, x_hat, m_hat, alpha, beta) -> np.ndarray:
    return (
        ((x - x_hat) ** 2).sum(axis=1)
        + alpha * ((m - m_hat) ** 2).sum(axis=1)
        + beta * ((x - m_hat) ** 2).sum(axis=1)
    )


def crm_loss_terms(x, m, x_hat, m_hat, alpha, beta) -> float:
    """||X - X_hat||^2 + alpha ||M - M_hat||^2 + beta ||X - M_hat||^2 (squared Frobenius)."""
    return float(
        ((x - x_hat) ** 2).sum()
        + alpha * ((m - m_hat) ** 2).sum()
        + beta * ((x - m_hat) ** 2).sum()
    )


def crm_loss(model: CrmModel, graph: Graph, adj, x: np.ndarray, m: np.ndarray) -> float:
    p = _forward(model.params, adj, x)
    return crm_loss_terms(x, m, p.x_hat, p.m_hat, model.alpha, model.beta)


def crm_loss_and_grads(params: Params, adj, x, m, alpha: float, beta: float, ax=None) -> tuple[float, Params]:
    p = _forward(params, adj, x, ax=ax)
    loss = crm_loss_terms(x, m, p.x_hat, p.m_hat, alpha, beta)
    d_xhat = 2.0 * (p.x_hat - x)
    d_mhat = 2.0 * alpha * (p.m_hat - m) + 2.0 * beta * (p.m_hat - x)
    gx1, gx2, dh_x = mlp_backward(p.decx, d_xhat, layer(params, "decx1"), layer(params, "decx2"))
    gm1, gm2, dh_m = mlp_backward(p.decm, d_mhat, layer(params, "decm1"), layer(params, "decm2"))
    ge1, ge2 = gcn_backward(p.enc, dh_x + dh_m, layer(params, "enc2"))
    grads: Params = {}
    for name, g in (("enc1", ge1), ("enc2", ge2), ("decx1", gx1), ("decx2", gx2), ("decm1", gm1), ("decm2", gm2)):
        grads[f"{name}.weight"] = g.weight
        grads[f"{name}.bias"] = g.bias
    return loss, grads


def train_crm(graph: Graph, alpha: float = 1.0, beta: float = 1.0, hidden_dim: int = 64,
              epochs: int = 200, lr: float = 0.01, seed: int = 0, weight_decay: float = 5e-4,
              aggregation: str = "sum") -> CrmModel:
    """Full-batch Adam on the reconstruction objective; ``loss_trace[k]`` is the loss before step ``k``."""
    model = init_crm(graph.num_features, hidden_dim, alpha, beta, seed, aggregation)
    adj = normalized_adjacency(graph)
    x = graph.features
    m = aggregate(graph, x, aggregation)
    ax = np.asarray(adj @ x)
    state = OptimizerState(lr=lr, weight_decay=weight_decay)
    params = model.params
    trace = []
    for epoch in range(epochs):
        loss, grads = crm_loss_and_grads(params, adj, x, m, alpha, beta, ax=ax)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"reconstruction loss became {loss} at epoch {epoch}")
        trace.append(loss)
        params = adam_step(params, grads, state)
    if epochs:
        log.debug("crm: loss %.4f -> %.4f over %d epochs", trace[0], trace[-1], epochs)
    model.params = params
    model.loss_trace = trace
    return model


def node_errors(model: CrmModel, graph: Graph) -> np.ndarray:
    """Per-node three-term reconstruction error; sums to the full objective."""
    adj = normalized_adjacency(graph)
    x = graph.features
    m = aggregate(graph, x, model.aggregation)
    p = _forward(model.params, adj, x)
    return _row_errors(x, m, p.x_hat, p.m_hat, model.alpha, model.beta)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def score_values(values, mu: float, sigma: float, tau: float = 0.5, orientation: str = "increasing") -> np.ndarray:
    """Sigmoid of ``(values - mu) / (tau * sigma)``; 0.5 everywhere when ``sigma`` is 0."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if orientation not in ("increasing", "literal"):
        raise ValueError(f"unknown orientation {orientation!r}")
    v = np.asarray(values, dtype=np.float64)
    if sigma == 0.0:
        return np.full_like(v, 0.5)
    z = (v - mu) / (tau * sigma)
    return _sigmoid(-z if orientation == "literal" else z)


def suspicion_scores(errors: np.ndarray, tau: float = 0.5, orientation: str = "increasing") -> np.ndarray:
    """Sigmoid of the standardized reconstruction error.

    ``orientation="increasing"`` gives s = sigmoid((e - mean) / (tau * std)),
    so larger errors mean more suspicious. ``"literal"`` negates the
    standardized error, so smaller errors score higher. Constant errors give 0.5.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        return score_values(e, 0.0, 0.0, tau, orientation)
    return score_values(e, e.mean(), e.std(), tau, orientation)


@dataclass
class DetectionReport:
    errors: np.ndarray
    mean_error: float
    std_error: float
    scores: np.ndarray
    suspect_all: list[int]
    suspect_triggers: list[int]
    suspect_targets: list[int]
    rho: float
    tau: float

    @property
    def num_nodes(self) -> int:
        return self.errors.size

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "rho": self.rho,
            "tau": self.tau,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "errors": self.errors.tolist(),
            "scores": self.scores.tolist(),
            "suspect_all": self.suspect_all,
            "suspect_triggers": self.suspect_triggers,
            "suspect_targets": self.suspect_targets,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectionReport":
        return cls(
            errors=np.array(doc["errors"], dtype=np.float64),
            mean_error=doc["mean_error"],
            std_error=doc["std_error"],
            scores=np.array(doc["scores"], dtype=np.float64),
            suspect_all=list(doc["suspect_all"]),
            suspect_triggers=list(doc["suspect_triggers"]),
            suspect_targets=list(doc["suspect_targets"]),
            rho=doc["rho"],
            tau=doc["tau"],
        )

    def csv_rows(self) -> list[list]:
        rank = {v: i for i, v in enumerate(self.suspect_all)}
        triggers = set(self.suspect_triggers)
        rows = [["node", "error", "score", "suspect", "partition"]]
        for v in range(self.num_nodes):
            if v in rank:
                part = "trigger" if v in triggers else "target"
            else:
                part = ""
            rows.append([v, repr(float(self.errors[v])), repr(float(self.scores[v])), int(v in rank), part])
        return rows


def top_fraction(errors: np.ndarray, rho: float) -> list[int]:
    """Indices of the ceil(rho * N) largest errors, descending; ties by ascending index."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    k = math.ceil(rho * errors.size)
    order = np.lexsort((np.arange(errors.size), -errors))
    return [int(i) for i in order[:k]]


def detect_from_errors(errors: np.ndarray, labeled_mask: np.ndarray, rho: float = 0.03, tau: float = 0.5,
                       orientation: str = "increasing") -> DetectionReport:
    suspects = top_fraction(errors, rho)
    return DetectionReport(
        errors=errors,
        mean_error=float(errors.mean()) if errors.size else 0.0,
        std_error=float(errors.std()) if errors.size else 0.0,
        scores=suspicion_scores(errors, tau, orientation),
        suspect_all=suspects,
        suspect_triggers=[v for v in suspects if not labeled_mask[v]],
        suspect_targets=[v for v in suspects if labeled_mask[v]],
        rho=rho,
        tau=tau,
    )


def detect(model: CrmModel, graph: Graph, rho: float = 0.03, tau: float = 0.5,
           orientation: str = "increasing") -> DetectionReport:
    """Score every node and split the top-rho suspects into unlabeled (trigger) and labeled (target) sets."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return detect_from_errors(node_errors(model, graph), graph.labeled_mask, rho, tau, orientation)


def prune_trigger_edges(graph: Graph, suspect_triggers) -> Graph:
    """Drop every edge touching a suspect trigger node; the nodes stay (isolated)."""
    suspects = np.zeros(graph.num_nodes, dtype=bool)
    suspects[np.asarray(list(suspect_triggers), dtype=np.int64)] = True
    keep = ~(suspects[graph.edges[:, 0]] | suspects[graph.edges[:, 1]])
    return replace_graph(graph, edges=graph.edges[keep])
