import math

import numpy as np
import pytest

from cogbd.graph import build_graph, normalized_adjacency
from cogbd.homophily import (
    HomophilyConfig,
    PerturbationQuery,
    feature_homophily,
    feature_homophily_all,
    homophily_audit,
    propagation_shift,
    target_alignment,
)

from conftest import random_graph


def star(center, leaves):
    x = np.vstack([center, *leaves])
    return build_graph([(0, i + 1) for i in range(len(leaves))], x)


def test_self_similar_node_scores_one():
    g = star([1.0, 1.0], [[2.0, 0.0], [0.0, 2.0]])
    assert feature_homophily(g, 0) == pytest.approx(1.0, abs=1e-15)


def test_isolated_node_scores_zero():
    g = build_graph([], np.ones((2, 2)))
    assert feature_homophily(g, 0) == 0.0
    assert feature_homophily_all(g).tolist() == [0.0, 0.0]


def test_hand_computed_cosine():
    g = star([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    assert feature_homophily(g, 0) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_inner_product_variant():
    g = star([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    cfg = HomophilyConfig("inner_product", "sum")
    assert feature_homophily(g, 0, cfg) == pytest.approx(1.0)


def test_vectorised_matches_scalar():
    g = random_graph(12, 4, seed=2)
    h = feature_homophily_all(g)
    for v in range(g.num_nodes):
        assert h[v] == pytest.approx(feature_homophily(g, v), abs=1e-12)


def test_audit_identical_features():
    g = build_graph([(0, 1), (1, 2), (2, 3)], np.ones((4, 3)))
    audit = homophily_audit(g, {"a": [0, 1], "b": [2, 3]})
    assert audit.groups["a"].mean == pytest.approx(1.0)
    assert audit.groups["b"].mean == pytest.approx(1.0)


def test_audit_empty_group_and_overlap():
    g = random_graph(6, 2, seed=1)
    audit = homophily_audit(g, {"a": [0, 1], "none": []})
    assert audit.groups["none"].count == 0 and audit.groups["none"].mean is None
    assert audit.to_csv().splitlines()[0] == "group,count,mean,std,min,max"
    with pytest.raises(ValueError):
        homophily_audit(g, {"a": [0, 1], "b": [1, 2]})


def query(n=6, depth=2, seed=0, dx_scale=1.0, same=False):
    rng = np.random.default_rng(seed)
    g = random_graph(n, 3, seed=seed)
    gp = g if same else random_graph(n, 3, p=0.5, seed=seed + 100)
    return PerturbationQuery(normalized_adjacency(g), normalized_adjacency(gp), g.features,
                             dx_scale * rng.standard_normal((n, 3)), depth, 1)


def test_shift_zero_perturbation():
    for part in propagation_shift(query(same=True, dx_scale=0.0)):
        assert not np.any(part)


def test_shift_structural_zero_when_adjacency_unchanged():
    q = query(same=True)
    direct, structural, feature = propagation_shift(q)
    assert not np.any(structural)
    np.testing.assert_allclose(feature, (np.linalg.matrix_power(q.adj, 2) @ q.feature_delta)[1], atol=1e-14)


def test_shift_terms_sum_to_direct():
    direct, structural, feature = propagation_shift(query(depth=2, seed=7))
    np.testing.assert_allclose(structural + feature, direct, atol=1e-10, rtol=0)


def test_query_size_limit():
    with pytest.raises(ValueError):
        PerturbationQuery(np.eye(65), np.eye(65), np.zeros((65, 1)), np.zeros((65, 1)), 1, 0)


def test_alignment_cases():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((3, 4))
    assert target_alignment(w, [0.2, 0.3, 0.5], 1, np.zeros(4)) == 0.0
    assert target_alignment(w, [0.0, 1.0, 0.0], 1, rng.standard_normal(4)) == pytest.approx(0.0, abs=1e-15)
    p, dh = np.array([0.2, 0.3, 0.5]), rng.standard_normal(4)
    expect = sum(p[c] * (w[0] - w[c]) @ dh for c in range(3))
    assert target_alignment(w, p, 0, dh) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(ValueError):
        target_alignment(w, [0.5, 0.6, 0.0], 0, dh)
