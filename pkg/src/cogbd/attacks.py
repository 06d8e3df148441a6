"""Simplified backdoor attacks: subgraph triggers (three feature modes) and sparse feature triggers.

Both families relabel the chosen target nodes to the target class and keep
the ground truth needed to re-apply the same trigger to unseen nodes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import UNLABELED, Graph, build_graph

SUBGRAPH_MODES = {
    "random": "subgraph_random",
    "target_similar": "subgraph_similar",
    "in_distribution": "subgraph_indist",
}
ATTACK_KINDS = tuple(SUBGRAPH_MODES.values()) + ("feature",)
TRUTH_VERSION = 1


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class SubgraphAttackSpec:
    num_targets: int = 6
    trigger_size: int = 3
    feature_mode: str = "random"
    wiring: str = "clique_plus_bridge"
    # scale of the shared offset added to the target row in target_similar mode
    similar_noise: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        if self.trigger_size < 1:
            raise AttackError("trigger_size must be >= 1")
        if self.feature_mode not in SUBGRAPH_MODES:
            raise AttackError(f"unknown feature_mode {self.feature_mode!r}; choose from {sorted(SUBGRAPH_MODES)}")
        if self.wiring != "clique_plus_bridge":
            raise AttackError(f"unknown wiring {self.wiring!r}")
        if self.num_targets < 0 or self.similar_noise < 0:
            raise AttackError("num_targets and similar_noise must be >= 0")

    @property
    def kind(self) -> str:
        return SUBGRAPH_MODES[self.feature_mode]


@dataclass(frozen=True)
class FeatureAttackSpec:
    num_targets: int = 6
    trigger_value: float | None = None
    dim_selection: str = "class_mean_gap"
    seed: int = 0

    def validate(self) -> None:
        if self.dim_selection != "class_mean_gap":
            raise AttackError(f"unknown dim_selection {self.dim_selection!r}")
        if self.num_targets < 0:
            raise AttackError("num_targets must be >= 0")

    @property
    def kind(self) -> str:
        return "feature"


@dataclass
class AttackGroundTruth:
    target_nodes: list[int]
    trigger_nodes: list[int]
    target_label: int
    attack_kind: str
    # what is needed to re-apply the same trigger at test time
    trigger_size: int = 0
    trigger_dims: list[int] = field(default_factory=list)
    trigger_value: float | None = None
    trigger_pattern: np.ndarray | None = None
    similar_offset: np.ndarray | None = None
    in_dist_pool: np.ndarray | None = None
    # inductive-split bookkeeping (filled by the experiment driver / CLI)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else a.tolist()

        return {
            "format_version": TRUTH_VERSION,
            "attack_kind": self.attack_kind,
            "target_label": self.target_label,
            "target_nodes": list(self.target_nodes),
            "trigger_nodes": list(self.trigger_nodes),
            "trigger_size": self.trigger_size,
            "trigger_dims": list(self.trigger_dims),
            "trigger_value": self.trigger_value,
            "trigger_pattern": arr(self.trigger_pattern),
            "similar_offset": arr(self.similar_offset),
            "in_dist_pool": arr(self.in_dist_pool),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackGroundTruth":
        if doc.get("format_version") != TRUTH_VERSION:
            raise AttackError(f"unsupported truth format_version {doc.get('format_version')!r}")

        def arr(key):
            v = doc.get(key)
            return None if v is None else np.array(v, dtype=np.float64)

        return cls(
            target_nodes=[int(v) for v in doc["target_nodes"]],
            trigger_nodes=[int(v) for v in doc["trigger_nodes"]],
            target_label=int(doc["target_label"]),
            attack_kind=doc["attack_kind"],
            trigger_size=int(doc.get("trigger_size", 0)),
            trigger_dims=[int(v) for v in doc.get("trigger_dims", [])],
            trigger_value=doc.get("trigger_value"),
            trigger_pattern=arr("trigger_pattern"),
            similar_offset=arr("similar_offset"),
            in_dist_pool=arr("in_dist_pool"),
            extra=doc.get("extra", {}),
        )


@dataclass
class PoisonedGraph:
    graph: Graph
    truth: AttackGroundTruth


def save_truth(truth: AttackGroundTruth, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(truth.to_dict()))
    return path


def load_truth(path) -> AttackGroundTruth:
    return AttackGroundTruth.from_dict(json.loads(Path(path).read_text()))


def trigger_dim_count(num_features: int) -> int:
    """ceil(max(0.02 F, 5))."""
    return math.ceil(max(0.02 * num_features, 5))


def select_targets(graph: Graph, num_targets: int, target_label: int, seed: int = 0) -> list[int]:
    """Uniform sample of labeled nodes whose label differs from the target label."""
    if not 0 <= target_label < graph.num_classes:
        raise AttackError(f"target label {target_label} out of range")
    if num_targets == 0:
        return []
    eligible = np.flatnonzero(graph.labeled_mask & (graph.labels != target_label))
    if eligible.size < num_targets:
        raise AttackError(f"only {eligible.size} eligible nodes for {num_targets} targets")
    rng = np.random.default_rng(seed)
    return sorted(int(v) for v in rng.choice(eligible, size=num_targets, replace=False))


def _relabel(graph: Graph, targets, target_label: int) -> tuple[np.ndarray, np.ndarray]:
    labels = graph.labels.copy()
    mask = graph.labeled_mask.copy()
    labels[targets] = target_label
    mask[targets] = True
    return labels, mask


def _clique_plus_bridge(anchors: np.ndarray, first_new: int, size: int) -> np.ndarray:
    edges = []
    for i, anchor in enumerate(anchors):
        base = first_new + i * size
        for a in range(size):
            for b in range(a + 1, size):
                edges.append((base + a, base + b))
        edges.append((int(anchor), base))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _subgraph_trigger_rows(truth: AttackGroundTruth, mode: str, anchor_rows: np.ndarray,
                           rng: np.random.Generator) -> np.ndarray:
    k = truth.trigger_size
    n_anchor = anchor_rows.shape[0]
    if mode == "random":
        return np.tile(truth.trigger_pattern, (n_anchor, 1))
    if mode == "target_similar":
        return np.repeat(anchor_rows + truth.similar_offset, k, axis=0)
    pool = truth.in_dist_pool
    picks = rng.integers(0, pool.shape[0], size=n_anchor * k)
    return pool[picks]


def _mode_of(kind: str) -> str:
    for mode, k in SUBGRAPH_MODES.items():
        if k == kind:
            return mode
    raise AttackError(f"{kind!r} is not a subgraph attack")


def inject_subgraph_trigger(graph: Graph, spec: SubgraphAttackSpec, target_label: int) -> PoisonedGraph:
    """Attach a ``trigger_size``-clique to every target through one bridge edge.

    Trigger features: ``random`` draws one shared pattern uniformly over the
    observed feature range; ``target_similar`` copies the target row plus a
    shared random offset scaled by ``similar_noise``; ``in_distribution``
    resamples rows of clean labeled nodes of the target class.
    """
    spec.validate()
    targets = select_targets(graph, spec.num_targets, target_label, spec.seed)
    rng = np.random.default_rng([spec.seed, 1])
    x = graph.features
    f = graph.num_features
    k = spec.trigger_size
    truth = AttackGroundTruth(targets, [], target_label, spec.kind, trigger_size=k)
    if spec.feature_mode == "random":
        lo, hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
        truth.trigger_pattern = rng.uniform(lo, hi, size=(k, f))
    elif spec.feature_mode == "target_similar":
        truth.similar_offset = spec.similar_noise * rng.standard_normal(f)
    else:
        pool_ids = np.flatnonzero(graph.labeled_mask & (graph.labels == target_label))
        if pool_ids.size == 0:
            raise AttackError("no labeled nodes of the target class to draw in-distribution triggers from")
        truth.in_dist_pool = x[pool_ids].copy()

    n = graph.num_nodes
    t = np.asarray(targets, dtype=np.int64)
    new_rows = _subgraph_trigger_rows(truth, spec.feature_mode, x[t], rng) if t.size else np.zeros((0, f))
    new_edges = _clique_plus_bridge(t, n, k)
    labels, mask = _relabel(graph, t, target_label)
    n_new = t.size * k
    poisoned = build_graph(
        np.concatenate([graph.edges, new_edges]),
        np.concatenate([x, new_rows]),
        np.concatenate([labels, np.full(n_new, UNLABELED)]),
        np.concatenate([mask, np.zeros(n_new, dtype=bool)]),
        graph.num_classes,
    )
    truth.trigger_nodes = list(range(n, n + n_new))
    return PoisonedGraph(poisoned, truth)


def class_mean_gap_dims(graph: Graph, target_label: int, count: int) -> list[int]:
    """Coordinates with the largest |mean(target class) - mean(other classes)| over labeled nodes."""
    lab = graph.labeled_mask
    in_cls = lab & (graph.labels == target_label)
    others = lab & (graph.labels != target_label)
    if not in_cls.any() or not others.any():
        raise AttackError("class-mean gap needs labeled nodes inside and outside the target class")
    gap = np.abs(graph.features[in_cls].mean(axis=0) - graph.features[others].mean(axis=0))
    order = np.lexsort((np.arange(gap.size), -gap))
    return sorted(int(j) for j in order[:count])


def inject_feature_trigger(graph: Graph, spec: FeatureAttackSpec, target_label: int) -> PoisonedGraph:
    """Overwrite a few discriminative coordinates of every target row; topology untouched."""
    spec.validate()
    count = trigger_dim_count(graph.num_features)
    if graph.num_features < count:
        raise AttackError(f"feature attack needs at least {count} feature dimensions, graph has {graph.num_features}")
    targets = select_targets(graph, spec.num_targets, target_label, spec.seed)
    dims = class_mean_gap_dims(graph, target_label, count)
    value = spec.trigger_value
    if value is None:
        value = float(np.abs(graph.features).max())
    x = graph.features.copy()
    t = np.asarray(targets, dtype=np.int64)
    if t.size:
        x[np.ix_(t, dims)] = value
    labels, mask = _relabel(graph, t, target_label)
    poisoned = build_graph(graph.edges, x, labels, mask, graph.num_classes)
    truth = AttackGroundTruth(targets, [], target_label, "feature", trigger_dims=dims, trigger_value=value)
    return PoisonedGraph(poisoned, truth)


def attach_test_triggers(unseen: Graph, truth: AttackGroundTruth, candidates, seed: int = 0) -> Graph:
    """Apply the training-time trigger mechanism to ``candidates`` without touching labels."""
    if truth.attack_kind not in ATTACK_KINDS:
        raise AttackError(f"unknown attack kind {truth.attack_kind!r}")
    c = np.asarray(sorted(int(v) for v in candidates), dtype=np.int64)
    if truth.attack_kind == "feature":
        if not truth.trigger_dims or truth.trigger_value is None:
            raise AttackError("feature truth lacks trigger dims / value")
        x = unseen.features.copy()
        if c.size:
            x[np.ix_(c, truth.trigger_dims)] = truth.trigger_value
        return build_graph(unseen.edges, x, unseen.labels, unseen.labeled_mask, unseen.num_classes)

    mode = _mode_of(truth.attack_kind)
    required = {"random": truth.trigger_pattern, "target_similar": truth.similar_offset,
                "in_distribution": truth.in_dist_pool}[mode]
    if required is None or truth.trigger_size < 1:
        raise AttackError(f"truth for {truth.attack_kind} lacks its trigger payload")
    rng = np.random.default_rng([seed, 2])
    k = truth.trigger_size
    n = unseen.num_nodes
    rows = _subgraph_trigger_rows(truth, mode, unseen.features[c], rng) if c.size else np.zeros((0, unseen.num_features))
    n_new = c.size * k
    return build_graph(
        np.concatenate([unseen.edges, _clique_plus_bridge(c, n, k)]),
        np.concatenate([unseen.features, rows]),
        np.concatenate([unseen.labels, np.full(n_new, UNLABELED)]),
        np.concatenate([unseen.labeled_mask, np.zeros(n_new, dtype=bool)]),
        unseen.num_classes,
    )
