"""Feature-based homophily and the propagation-shift / target-alignment diagnostics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph, aggregate_mean, aggregate_sum

MAX_DENSE_NODES = 64


@dataclass(frozen=True)
class HomophilyConfig:
    similarity: str = "cosine"
    aggregation: str = "mean"

    def __post_init__(self):
        if self.similarity not in ("cosine", "inner_product"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.aggregation not in ("mean", "sum"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def _similarity(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    dot = np.einsum("ij,ij->i", a, b)
    if kind == "inner_product":
        return dot
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    out = np.zeros_like(dot)
    ok = denom > 0
    out[ok] = dot[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def feature_homophily_all(graph: Graph, config: HomophilyConfig = HomophilyConfig()) -> np.ndarray:
    """Homophily of every node; isolated nodes and zero vectors score 0."""
    x = graph.features
    agg = aggregate_mean(graph, x) if config.aggregation == "mean" else aggregate_sum(graph, x)
    h = _similarity(x, agg, config.similarity)
    h[graph.degrees == 0] = 0.0
    return h


def feature_homophily(graph: Graph, v: int, config: HomophilyConfig = HomophilyConfig()) -> float:
    if not 0 <= v < graph.num_nodes:
        raise IndexError(f"node {v} out of range")
    nbrs = graph.neighbors(v)
    if nbrs.size == 0:
        return 0.0
    rows = graph.features[nbrs]
    agg = rows.mean(axis=0) if config.aggregation == "mean" else rows.sum(axis=0)
    return float(_similarity(graph.features[v][None, :], agg[None, :], config.similarity)[0])


@dataclass
class GroupStats:
    count: int
    mean: float | None
    std: float | None
    min: float | None
    max: float | None


@dataclass
class HomophilyAudit:
    groups: dict[str, GroupStats]

    def to_dict(self) -> dict:
        return {name: vars(s) for name, s in self.groups.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "count", "mean", "std", "min", "max"])
        for name, s in self.groups.items():
            w.writerow([name, s.count] + ["" if x is None else repr(x) for x in (s.mean, s.std, s.min, s.max)])
        return buf.getvalue()


def homophily_audit(graph: Graph, groups: dict[str, object], config: HomophilyConfig = HomophilyConfig()) -> HomophilyAudit:
    """Per-group summary statistics of node homophily, in the order groups are given."""
    seen: set[int] = set()
    for name, nodes in groups.items():
        s = {int(v) for v in nodes}
        if s & seen:
            raise ValueError(f"group {name!r} overlaps an earlier group")
        seen |= s
    h = feature_homophily_all(graph, config)
    out = {}
    for name, nodes in groups.items():
        idx = np.asarray(sorted(int(v) for v in nodes), dtype=np.int64)
        if idx.size == 0:
            out[name] = GroupStats(0, None, None, None, None)
            continue
        vals = h[idx]
        out[name] = GroupStats(int(idx.size), float(vals.mean()), float(vals.std()), float(vals.min()), float(vals.max()))
    return HomophilyAudit(out)


# --------------------------------------------------------------------------- perturbation diagnostics


@dataclass
class PerturbationQuery:
    adj: np.ndarray
    adj_perturbed: np.ndarray
    features: np.ndarray
    feature_delta: np.ndarray
    depth: int
    node: int

    def __post_init__(self):
        self.adj = _dense(self.adj)
        self.adj_perturbed = _dense(self.adj_perturbed)
        n = self.adj.shape[0]
        if n > MAX_DENSE_NODES:
            raise ValueError(f"diagnostic instances are limited to {MAX_DENSE_NODES} nodes")
        if self.adj.shape != (n, n) or self.adj_perturbed.shape != (n, n):
            raise ValueError("adjacency matrices must both be N x N")
        if self.features.shape[0] != n or self.feature_delta.shape != self.features.shape:
            raise ValueError("features and feature_delta must be N x F")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 <= self.node < n:
            raise IndexError(f"node {self.node} out of range")


def _dense(a) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=np.float64)


def propagation_shift(q: PerturbationQuery) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Representation shift of node ``q.node`` after ``q.depth`` propagation steps.

    Returns ``(direct, structural, feature)``: the direct difference of the
    propagated rows, the part due to changed propagation weights acting on
    the original features, and the part due to the feature perturbation
    under the perturbed weights.
    """
    v, x, dx = q.node, q.features, q.feature_delta
    direct_new = x + dx
    direct_old = x
    for _ in range(q.depth):
        direct_new = q.adj_perturbed @ direct_new
        direct_old = q.adj @ direct_old
    direct = direct_new[v] - direct_old[v]
    pi = np.linalg.matrix_power(q.adj, q.depth)[v]
    pi_new = np.linalg.matrix_power(q.adj_perturbed, q.depth)[v]
    return direct, (pi_new - pi) @ x, pi_new @ dx


def target_alignment(classifier_weights: np.ndarray, prob_row: np.ndarray, target: int, delta_h: np.ndarray) -> float:
    """<w_target - sum_c p_c w_c, delta_h> for a bias-free linear classifier.

    ``classifier_weights`` holds one row per class.
    """
    w = np.asarray(classifier_weights, dtype=np.float64)
    p = np.asarray(prob_row, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9 or (p < 0).any():
        raise ValueError("prob_row must be a probability distribution")
    if not 0 <= target < w.shape[0]:
        raise IndexError(f"target class {target} out of range")
    w_bar = p @ w
    return float((w[target] - w_bar) @ np.asarray(delta_h, dtype=np.float64))
