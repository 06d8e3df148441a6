import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cogbd.detector import detect_from_errors, suspicion_scores, top_fraction
from cogbd.evaluation import detection_recall, prune_baseline
from cogbd.attacks import AttackGroundTruth
from cogbd.graph import build_graph, normalized_adjacency
from cogbd.homophily import feature_homophily_all
from cogbd.kernels import init_params
from cogbd.robust import RobustClassifier, node_weights, predict

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def graphs(draw, max_nodes=12, f=3):
    n = draw(st.integers(1, max_nodes))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=20)) if pairs else []
    x = draw(arrays(np.float64, (n, f), elements=st.floats(-5, 5, allow_nan=False)))
    return build_graph(np.array(edges, dtype=np.int64).reshape(-1, 2), x)


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_norm_adj_symmetric_and_bounded(g):
    a = normalized_adjacency(g).toarray()
    np.testing.assert_allclose(a, a.T, atol=1e-15)
    assert np.all(a >= 0) and np.all(a <= 1 + 1e-15)
    # spectral radius of the self-loop normalised matrix is 1
    assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-9


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_homophily_in_range(g):
    h = feature_homophily_all(g)
    assert np.all(h >= -1) and np.all(h <= 1)
    assert not h[g.degrees == 0].any()


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=finite), st.floats(0.05, 5))
def test_scores_monotone_in_error(e, tau):
    s = suspicion_scores(e, tau)
    assert np.all((s >= 0) & (s <= 1))
    order = np.argsort(e, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=finite), st.floats(0.001, 0.999))
def test_top_fraction_size_and_order(e, rho):
    top = top_fraction(e, rho)
    assert len(top) == math.ceil(rho * e.size)
    rest = np.setdiff1d(np.arange(e.size), top)
    if rest.size:
        assert e[top].min() >= e[rest].max()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 40, elements=finite), st.lists(st.integers(0, 39), min_size=1, max_size=8, unique=True))
def test_recall_monotone_in_rho(e, targets):
    truth = AttackGroundTruth(targets, [], 0, "feature")
    mask = np.ones(40, bool)
    recalls = [detection_recall(detect_from_errors(e, mask, r), truth)[0] for r in (0.01, 0.03, 0.05, 0.08, 0.10)]
    assert recalls == sorted(recalls)


@settings(max_examples=40, deadline=None)
@given(graphs(), st.floats(-1, 1))
def test_prune_keeps_only_similar_edges(g, thr):
    kept = prune_baseline(g, thr).edge_set()
    assert kept <= g.edge_set()
    x = g.features
    for u, v in g.edge_set() - kept:
        nu, nv = np.linalg.norm(x[u]), np.linalg.norm(x[v])
        c = 0.0 if nu * nv == 0 else x[u] @ x[v] / (nu * nv)
        assert c < thr + 1e-12


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.5, 4), st.floats(0.5, 4))
def test_weights_move_opposite_ways(s1, s2, a, b):
    lo, hi = sorted((s1, s2))
    wl, ws = node_weights(np.array([lo, hi]), a, b)
    assert 0 <= wl.min() and wl.max() <= 1 and 0 <= ws.min() and ws.max() <= 1
    assert wl[0] >= wl[1] and ws[0] <= ws[1]


@settings(max_examples=40, deadline=None)
@given(graphs(max_nodes=20))
def test_norm_adj_matches_dense_oracle(g):
    a = g.adjacency.toarray() + np.eye(g.num_nodes)
    d = a.sum(axis=1)
    np.testing.assert_allclose(normalized_adjacency(g).toarray(), a / np.sqrt(np.outer(d, d)), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(graphs(max_nodes=8), st.floats(-50, 50), st.integers(0, 2**31 - 1))
def test_argmax_invariant_to_constant_logit_shift(g, c, seed):
    params = init_params({"gcn1": (3, 4), "gcn2": (4, 3)}, seed)
    shifted = dict(params, **{"gcn2.bias": params["gcn2.bias"] + c})
    a, prob = predict(RobustClassifier(params, 3), g)
    b = predict(RobustClassifier(shifted, 3), g)[0]
    top2 = np.sort(np.log(prob), axis=1)[:, -2:]
    clear = top2[:, 1] - top2[:, 0] > 1e-9 * (1 + abs(c))
    assert np.array_equal(a[clear], b[clear])
