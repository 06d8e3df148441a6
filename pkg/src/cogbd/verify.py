"""Self-checks: gradient fidelity, the propagation-shift identity and analytic score values.

Gradient functions are looked up through their modules at call time so a
patched (for example sign-flipped) backward pass is caught.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import detector, robust
from .graph import aggregate_sum, build_graph, normalized_adjacency
from .homophily import PerturbationQuery, propagation_shift
from .kernels import grad_check, init_params

GRAD_TOL = 1e-4
SHIFT_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_graph(rng: np.random.Generator, n: int, f: int, p: float = 0.4, k: int = 3):
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    labels = rng.integers(0, k, n)
    return build_graph(edges, rng.standard_normal((n, f)), labels, np.ones(n, bool), k)


def crm_instance(rng: np.random.Generator):
    """Tiny CRM objective ``params -> (loss, grads)`` and its starting point."""
    n, f, d = int(rng.integers(4, 8)), 3, 4
    g = random_graph(rng, n, f)
    alpha, beta = rng.uniform(0.1, 2.0, 2)
    params = detector.init_crm(f, d, alpha, beta, int(rng.integers(1 << 30))).params
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
    adj, x = normalized_adjacency(g), g.features
    m = aggregate_sum(g, x)

    def objective(p):
        return detector.crm_loss_and_grads(p, adj, x, m, alpha, beta)

    return objective, params


def robust_instance(rng: np.random.Generator, cap: str = "none"):
    """Tiny robust-loss objective with a nonempty negated term."""
    n, f, d, k = int(rng.integers(6, 10)), 3, 4, 3
    g = random_graph(rng, n, f, k=k)
    perm = rng.permutation(n)
    v_s, v_l = perm[:2], perm[2:]
    w_l, w_s = robust.node_weights(rng.random(n))
    lam = float(rng.uniform(0.1, 1.0))
    params = init_params(robust.classifier_shapes(f, d, k), int(rng.integers(1 << 30)))
    params = {name: v + 0.1 * rng.standard_normal(v.shape) for name, v in params.items()}
    adj, x = normalized_adjacency(g), g.features

    def objective(p):
        (total, _, _), grads = robust.classifier_loss_and_grads(p, adj, x, g.labels, v_l, v_s, w_l, w_s, lam, cap)
        return total, grads

    return objective, params


def check_gradients(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    makers = (
        ("crm_grad", crm_instance),
        ("robust_grad", robust_instance),
        ("robust_grad_capped", lambda r: robust_instance(r, "stop_below_uniform")),
    )
    for name, make in makers:
        worst = max(grad_check(*make(rng), eps=1e-5) for _ in range(instances))
        out.append(CheckResult(name, worst <= GRAD_TOL, f"max rel err {worst:.2e} over {instances} instances"))
    return out


def shift_instance(rng: np.random.Generator) -> PerturbationQuery:
    n, f = int(rng.integers(3, 11)), int(rng.integers(1, 5))
    g = random_graph(rng, n, f)
    flip = rng.random((n, n)) < 0.2
    flip = np.triu(flip, 1)
    a = g.adjacency.toarray().astype(bool) ^ (flip | flip.T)
    u, v = np.nonzero(np.triu(a, 1))
    gp = build_graph(np.stack([u, v], axis=1), g.features)
    dx = np.where(rng.random((n, 1)) < 0.3, rng.standard_normal((n, f)), 0.0)
    return PerturbationQuery(normalized_adjacency(g), normalized_adjacency(gp), g.features, dx,
                             int(rng.integers(1, 4)), int(rng.integers(n)))


def check_shift_identity(instances: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        direct, structural, feature = propagation_shift(shift_instance(rng))
        worst = max(worst, float(np.abs(direct - structural - feature).max(initial=0.0)))
    return CheckResult("shift_identity", worst <= SHIFT_TOL, f"max residual {worst:.2e} over {instances} instances")


def check_scores(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    tau = 0.5
    mu, sigma = float(rng.uniform(1, 5)), float(rng.uniform(0.5, 2))
    s_mu, s_one = (float(v) for v in detector.score_values([mu, mu + tau * sigma], mu, sigma, tau))
    expect = 1.0 / (1.0 + math.exp(-1.0))
    out = [
        CheckResult("score_at_mean", s_mu == 0.5, f"s(mean)={s_mu!r}"),
        CheckResult("score_at_one_tau", abs(s_one - expect) <= 1e-12, f"s(mean+tau*std)={s_one!r}"),
    ]
    wl0, ws0 = robust.node_weights(np.array([0.0]))
    wl1, ws1 = robust.node_weights(np.array([1.0]))
    ok = (wl0[0], ws0[0], wl1[0], ws1[0]) == (1.0, 0.0, 0.0, 1.0)
    out.append(CheckResult("weight_endpoints", ok, f"s=0 -> ({wl0[0]}, {ws0[0]}), s=1 -> ({wl1[0]}, {ws1[0]})"))

    g = random_graph(rng, 12, 4)
    model = detector.init_crm(4, 5, 0.7, 1.3, 3)
    errs = detector.node_errors(model, g)
    adj, x = normalized_adjacency(g), g.features
    total = detector.crm_loss(model, g, adj, x, aggregate_sum(g, x))
    gap = abs(errs.sum() - total)
    out.append(CheckResult("error_sum", gap <= 1e-9, f"|sum e - loss|={gap:.2e}"))
    return out


def run_checks(seed: int = 0) -> list[CheckResult]:
    return [*check_gradients(seed=seed), check_shift_identity(seed=seed), *check_scores(seed)]
