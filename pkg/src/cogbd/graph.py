"""Attributed graphs: construction, propagation matrices, synthetic data, splits and I/O."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1
UNLABELED = -1


class GraphError(ValueError):
    """Raised for inconsistent graph inputs."""


class GraphFormatError(GraphError):
    """Raised when a graph file cannot be parsed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically. ``labels`` uses ``-1`` for nodes without a
    class (e.g. injected trigger nodes); ``labeled_mask`` marks the
    supervised node set.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray
    num_classes: int

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency without self-loops."""
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        a.sort_indices()
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.bincount(self.edges.ravel(), minlength=self.num_nodes)
        return _frozen(d.astype(np.int64))

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.labeled_mask, other.labeled_mask)
        )

    __hash__ = None  # type: ignore[assignment]


def _canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise GraphError(f"edge {tuple(int(x) for x in bad)} out of range for {n} nodes")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size:
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


def build_graph(edges, features, labels=None, labeled_mask=None, num_classes: int | None = None) -> Graph:
    """Validate inputs and return a canonical :class:`Graph`.

    Edges are direction-normalized and deduplicated; self-loops are dropped.
    """
    x = np.array(features, dtype=np.float64)
    if x.ndim != 2:
        raise GraphError(f"features must be a 2-d matrix, got shape {x.shape}")
    n = x.shape[0]
    if labels is None:
        y = np.full(n, UNLABELED, dtype=np.int64)
    else:
        y = np.array(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise GraphError(f"labels has {y.shape[0]} entries for {n} nodes")
    if labeled_mask is None:
        mask = y >= 0
    else:
        mask = np.array(labeled_mask, dtype=bool).reshape(-1)
    if mask.shape[0] != n:
        raise GraphError(f"labeled_mask has {mask.shape[0]} entries for {n} nodes")
    if num_classes is None:
        num_classes = int(y.max()) + 1 if (y >= 0).any() else 0
    if (y < UNLABELED).any() or (y >= num_classes).any():
        raise GraphError(f"labels must lie in [0, {num_classes}) or be {UNLABELED}")
    if (mask & (y < 0)).any():
        raise GraphError("labeled_mask marks a node that has no label")
    e = _canonical_edges(edges, n)
    return Graph(n, _frozen(e), _frozen(x), _frozen(y), _frozen(mask), int(num_classes))


def replace_graph(g: Graph, **changes) -> Graph:
    fields = dict(edges=g.edges, features=g.features, labels=g.labels,
                  labeled_mask=g.labeled_mask, num_classes=g.num_classes)
    fields.update(changes)
    return build_graph(**fields)


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """Return D^{-1/2} (A + I) D^{-1/2} with degrees taken on A + I."""
    n = g.num_nodes
    deg = g.degrees.astype(np.float64) + 1.0
    u, v = g.edges[:, 0], g.edges[:, 1]
    # one value per unordered pair keeps the result exactly symmetric
    w = 1.0 / np.sqrt(deg[u] * deg[v])
    idx = np.arange(n)
    rows = np.concatenate([u, v, idx])
    cols = np.concatenate([v, u, idx])
    vals = np.concatenate([w, w, 1.0 / deg])
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    a.sort_indices()
    return a


def _check_rows(g: Graph, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.num_nodes:
        raise GraphError(f"expected a matrix with {g.num_nodes} rows, got shape {x.shape}")
    return x


def aggregate_sum(g: Graph, x: np.ndarray) -> np.ndarray:
    """Sum of neighbour rows (raw adjacency, no self-loop); isolated nodes get zeros."""
    x = _check_rows(g, x)
    return np.asarray(g.adjacency @ x)


def aggregate_mean(g: Graph, x: np.ndarray) -> np.ndarray:
    """Mean of neighbour rows; isolated nodes get zeros."""
    s = aggregate_sum(g, x)
    deg = g.degrees
    out = np.zeros_like(s)
    nz = deg > 0
    out[nz] = s[nz] / deg[nz, None]
    return out


def aggregate(g: Graph, x: np.ndarray, mode: str = "sum") -> np.ndarray:
    if mode == "sum":
        return aggregate_sum(g, x)
    if mode == "mean":
        return aggregate_mean(g, x)
    raise GraphError(f"unknown aggregation {mode!r}")


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Node-induced subgraph; nodes are renumbered in ascending original order."""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    e = remap[g.edges]
    e = e[(e >= 0).all(axis=1)]
    return build_graph(e, g.features[nodes], g.labels[nodes], g.labeled_mask[nodes], g.num_classes)


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    num_nodes: int = 1000
    num_classes: int = 5
    intra_class_edge_prob: float = 0.05
    inter_class_edge_prob: float = 0.005
    feature_dim: int = 64
    class_mean_separation: float = 1.0
    feature_noise_std: float = 1.0
    labeled_fraction: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.num_nodes < 0 or self.num_classes < 1 or self.feature_dim < 1:
            raise GraphError("num_nodes >= 0, num_classes >= 1 and feature_dim >= 1 required")
        for name in ("intra_class_edge_prob", "inter_class_edge_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GraphError(f"{name} must lie in [0, 1], got {p}")
        if self.intra_class_edge_prob < self.inter_class_edge_prob:
            raise GraphError("intra_class_edge_prob must be >= inter_class_edge_prob")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise GraphError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.feature_noise_std < 0 or self.class_mean_separation < 0:
            raise GraphError("feature_noise_std and class_mean_separation must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Graph:
    """Stochastic block model with Gaussian class-conditional features.

    Class ``c`` has mean vector ``separation * g_c`` with ``g_c ~ N(0, I)``;
    each node adds isotropic noise of std ``feature_noise_std``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, k = spec.num_nodes, spec.num_classes
    labels = rng.permutation(np.arange(n) % k)

    src, dst = [], []
    chunk = 256
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        draws = rng.random((stop - start, n))
        same = labels[start:stop, None] == labels[None, :]
        prob = np.where(same, spec.intra_class_edge_prob, spec.inter_class_edge_prob)
        hit = draws < prob
        r, c = np.nonzero(hit)
        r = r + start
        upper = c > r
        src.append(r[upper])
        dst.append(c[upper])
    edges = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1) if n else np.zeros((0, 2))

    means = spec.class_mean_separation * rng.standard_normal((k, spec.feature_dim))
    noise = spec.feature_noise_std * rng.standard_normal((n, spec.feature_dim))
    features = means[labels] + noise

    mask = np.zeros(n, dtype=bool)
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        m = max(1, int(round(spec.labeled_fraction * members.size)))
        mask[rng.choice(members, size=min(m, members.size), replace=False)] = True
    return build_graph(edges, features, labels, mask, k)


# --------------------------------------------------------------------------- inductive split


@dataclass(frozen=True, eq=False)
class InductiveSplit:
    train_graph: Graph
    unseen_graph: Graph
    train_node_ids: np.ndarray
    unseen_node_ids: np.ndarray
    # local indices into unseen_graph
    unseen_clean_ids: np.ndarray
    unseen_poison_candidate_ids: np.ndarray


def split_inductive(g: Graph, train_fraction: float = 0.8, seed: int = 0) -> InductiveSplit:
    """Random node split into disjoint train / unseen subgraphs; cross edges are dropped.

    The unseen nodes are further halved into a clean subset and a
    poison-candidate subset.
    """
    if not 0.0 < train_fraction < 1.0:
        raise GraphError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if g.num_nodes < 2:
        raise GraphError("an inductive split needs at least two nodes")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.num_nodes)
    n_train = min(max(int(round(train_fraction * g.num_nodes)), 1), g.num_nodes - 1)
    train_ids = np.sort(perm[:n_train])
    unseen_ids = np.sort(perm[n_train:])
    local = rng.permutation(unseen_ids.size)
    half = unseen_ids.size // 2
    return InductiveSplit(
        train_graph=induced_subgraph(g, train_ids),
        unseen_graph=induced_subgraph(g, unseen_ids),
        train_node_ids=_frozen(train_ids),
        unseen_node_ids=_frozen(unseen_ids),
        unseen_clean_ids=_frozen(np.sort(local[half:])),
        unseen_poison_candidate_ids=_frozen(np.sort(local[:half])),
    )


# --------------------------------------------------------------------------- I/O


def graph_to_dict(g: Graph) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "num_nodes": g.num_nodes,
        "num_features": g.num_features,
        "num_classes": g.num_classes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
        "labeled_mask": g.labeled_mask.tolist(),
    }


def graph_from_dict(doc: dict) -> Graph:
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        n = int(doc["num_nodes"])
        f = int(doc["num_features"])
        feats = np.array(doc["features"], dtype=np.float64).reshape(n, f)
        g = build_graph(doc["edges"], feats, doc["labels"], doc["labeled_mask"], int(doc["num_classes"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"malformed graph document: {exc}") from exc
    return g


def save_graph(g: Graph, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(graph_to_dict(g)))
    return path


def load_graph(path) -> Graph:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return graph_from_dict(doc)


def load_csv_graph(edges_path, features_path, labels_path=None) -> Graph:
    """Import a two-column integer edge list plus an N x F features CSV.

    An optional labels CSV holds one integer per line (``-1`` for unknown);
    all known labels are treated as labeled.
    """
    with open(edges_path, newline="") as fh:
        edges = [(int(r[0]), int(r[1])) for r in csv.reader(fh) if r and not r[0].startswith("#")]
    feats = np.loadtxt(features_path, delimiter=",", ndmin=2)
    labels = None
    if labels_path is not None:
        labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int64, ndmin=1)
    return build_graph(edges, feats, labels)
