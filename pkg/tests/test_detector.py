import math

import numpy as np
import pytest

from cogbd.detector import (
    crm_forward,
    crm_loss,
    crm_loss_terms,
    detect,
    detect_from_errors,
    init_crm,
    node_errors,
    prune_trigger_edges,
    score_values,
    suspicion_scores,
    top_fraction,
    train_crm,
    DetectionReport,
)
from cogbd.graph import aggregate_sum, build_graph, normalized_adjacency, SyntheticSpec, generate_synthetic
from cogbd.attacks import FeatureAttackSpec, inject_feature_trigger

from conftest import random_graph

SIGMA_ONE = 0.7310585786300049


def test_forward_zero_params_constant_rows():
    g = random_graph(5, 3, seed=0)
    m = init_crm(3, 4, seed=0)
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    m.params["decx2.bias"] = np.array([1.0, 2.0, 3.0])
    _, x_hat, m_hat = crm_forward(m, normalized_adjacency(g), g.features)
    assert np.all(x_hat == [1.0, 2.0, 3.0]) and not m_hat.any()


def test_forward_single_node_perceptron():
    g = build_graph([], np.array([[0.3, -1.2, 0.5]]))
    m = init_crm(3, 4, seed=2)
    p = m.params
    h, x_hat, _ = crm_forward(m, normalized_adjacency(g), g.features)
    hid = np.maximum(g.features @ p["enc1.weight"] + p["enc1.bias"], 0) @ p["enc2.weight"] + p["enc2.bias"]
    np.testing.assert_allclose(h, hid, atol=1e-12)
    dec = np.maximum(hid @ p["decx1.weight"] + p["decx1.bias"], 0) @ p["decx2.weight"] + p["decx2.bias"]
    np.testing.assert_allclose(x_hat, dec, atol=1e-12)


def test_loss_terms():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert crm_loss_terms(x, x, x, x, 1.0, 1.0) == 0.0
    m = np.array([[0.0, 1.0], [1.0, 1.0]])
    x_hat = np.array([[1.0, 1.0], [0.0, 0.0]])
    m_hat = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert crm_loss_terms(x, m, x_hat, m_hat, 0.0, 0.0) == 5.0
    # node 1 + 4, neigh 1 + 1, homo (1 + 0) + (1 + 4)
    assert crm_loss_terms(x, m, x_hat, m_hat, 0.5, 2.0) == pytest.approx(5.0 + 0.5 * 2.0 + 2.0 * 6.0)


def test_errors_sum_to_loss():
    g = random_graph(10, 3, seed=1)
    m = init_crm(3, 4, 0.7, 1.3, seed=3, aggregation="sum")
    adj, x = normalized_adjacency(g), g.features
    assert node_errors(m, g).sum() == pytest.approx(crm_loss(m, g, adj, x, aggregate_sum(g, x)), abs=1e-9)


def test_train_crm_decreases_and_deterministic():
    g = generate_synthetic(SyntheticSpec(num_nodes=200, feature_dim=16, seed=0))
    a = train_crm(g, epochs=60, hidden_dim=16, seed=0, aggregation="mean")
    b = train_crm(g, epochs=60, hidden_dim=16, seed=0, aggregation="mean")
    assert a.loss_trace[-1] < a.loss_trace[0]
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_train_crm_zero_epochs():
    g = random_graph(6, 3, seed=2)
    m = train_crm(g, epochs=0, hidden_dim=4, seed=5)
    init = init_crm(3, 4, seed=5)
    for k in init.params:
        np.testing.assert_array_equal(m.params[k], init.params[k])


def test_score_values():
    mu, sd, tau = 2.0, 3.0, 0.5
    s = score_values([mu, mu + tau * sd], mu, sd, tau)
    assert s[0] == 0.5
    assert s[1] == pytest.approx(SIGMA_ONE, abs=1e-12)
    assert score_values([mu + tau * sd], mu, sd, tau, "literal")[0] == pytest.approx(1 - SIGMA_ONE, abs=1e-12)


def test_scores_constant_errors():
    assert suspicion_scores(np.full(5, 3.0)).tolist() == [0.5] * 5


def test_scores_extreme_values_stay_finite():
    s = suspicion_scores(np.array([0.0] * 99 + [1e6]), tau=1e-3)
    assert np.isfinite(s).all() and s[-1] == 1.0


def test_top_fraction_count_and_ties():
    e = np.zeros(100)
    assert top_fraction(e, 0.03) == [0, 1, 2]
    e = np.random.default_rng(0).random(100)
    top = top_fraction(e, 0.03)
    assert top == list(np.argsort(-e)[:3])


def test_detect_all_labeled_has_no_triggers():
    rep = detect_from_errors(np.arange(10.0), np.ones(10, bool), rho=0.2)
    assert rep.suspect_all == [9, 8] and rep.suspect_triggers == [] and rep.suspect_targets == [9, 8]


def test_detect_partition():
    mask = np.array([True, False] * 5)
    rep = detect_from_errors(np.arange(10.0), mask, rho=0.3)
    assert rep.suspect_all == [9, 8, 7]
    assert rep.suspect_triggers == [9, 7] and rep.suspect_targets == [8]


def test_report_round_trip():
    rep = detect_from_errors(np.arange(6.0), np.ones(6, bool), rho=0.5)
    back = DetectionReport.from_dict(rep.to_dict())
    assert back.suspect_all == rep.suspect_all and np.array_equal(back.scores, rep.scores)
    assert len(rep.csv_rows()) == 7


def test_prune_cases():
    g = build_graph([(0, 1), (1, 2), (2, 3), (0, 3)], np.zeros((4, 1)))
    assert prune_trigger_edges(g, []) == g
    assert prune_trigger_edges(g, [1]).num_edges == 2
    both = prune_trigger_edges(g, [0, 1])
    assert both.edge_set() == {(2, 3)}
    assert both.num_nodes == 4


def test_planted_feature_attack_raises_target_error():
    g = generate_synthetic(SyntheticSpec(num_nodes=400, feature_noise_std=0.3, seed=1))
    pg = inject_feature_trigger(g, FeatureAttackSpec(num_targets=6, seed=1), 0)
    m = train_crm(pg.graph, epochs=150, seed=0, aggregation="mean")
    rep = detect(m, pg.graph)
    tgt = pg.truth.target_nodes
    clean = np.setdiff1d(np.arange(pg.graph.num_nodes), tgt)
    assert rep.errors[tgt].mean() > rep.errors[clean].mean()
    assert len(rep.suspect_all) == math.ceil(0.03 * pg.graph.num_nodes)
