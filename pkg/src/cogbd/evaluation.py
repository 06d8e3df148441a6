"""Evaluation protocol: attack/defense metrics, the similarity-pruning baseline and the experiment driver."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attacks import (
    AttackGroundTruth,
    FeatureAttackSpec,
    SubgraphAttackSpec,
    attach_test_triggers,
    inject_feature_trigger,
    inject_subgraph_trigger,
)
from .config import Config, stage_seed
from .detector import DetectionReport, detect, prune_trigger_edges, train_crm
from .graph import (
    Graph,
    InductiveSplit,
    SyntheticSpec,
    generate_synthetic,
    load_graph,
    replace_graph,
    split_inductive,
)
from .robust import RobustClassifier, RobustTrainConfig, predict, train_robust, train_vanilla

log = logging.getLogger(__name__)

CONDITIONS = ("clean_ref", "undefended", "prune", "cogbd")
METRIC_FIELDS = ("asr_percent", "acc_percent", "recall_tar_percent", "recall_tri_percent", "clean_acc_percent")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, seed, cause: Exception):
        super().__init__(f"stage {stage!r} failed for seed {seed}: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------- metrics


def asr_from_predictions(pred: np.ndarray, eval_nodes, target_label: int, true_labels: np.ndarray) -> float:
    """Percentage of eval nodes (true label != target) predicted as the target label."""
    nodes = np.asarray([v for v in eval_nodes if true_labels[v] != target_label], dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("no evaluation nodes left for ASR")
    return 100.0 * float(np.mean(pred[nodes] == target_label))


def acc_from_predictions(pred: np.ndarray, eval_nodes, true_labels: np.ndarray) -> float:
    nodes = np.asarray(list(eval_nodes), dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("no evaluation nodes for ACC")
    if (true_labels[nodes] < 0).any():
        raise ValueError("ACC needs true labels for every evaluation node")
    return 100.0 * float(np.mean(pred[nodes] == true_labels[nodes]))


def asr(classifier: RobustClassifier, poisoned_unseen: Graph, eval_nodes, target_label: int,
        true_labels: np.ndarray) -> float:
    pred, _ = predict(classifier, poisoned_unseen)
    return asr_from_predictions(pred, eval_nodes, target_label, true_labels)


def acc(classifier: RobustClassifier, clean_unseen: Graph, eval_nodes) -> float:
    pred, _ = predict(classifier, clean_unseen)
    return acc_from_predictions(pred, eval_nodes, clean_unseen.labels)


def detection_recall(report: DetectionReport, truth: AttackGroundTruth) -> tuple[float, float | None]:
    """Recall of poisoned targets and of trigger nodes inside ``suspect_all``.

    Trigger recall is ``None`` when the attack injects no trigger nodes.
    """
    n = report.num_nodes
    for v in list(truth.target_nodes) + list(truth.trigger_nodes):
        if not 0 <= v < n:
            raise ValueError(f"truth node {v} is outside the {n}-node report")
    found = set(report.suspect_all)

    def recall(nodes):
        return 100.0 * len(found.intersection(nodes)) / len(nodes)

    tar = recall(truth.target_nodes) if truth.target_nodes else 0.0
    tri = recall(truth.trigger_nodes) if truth.trigger_nodes else None
    return tar, tri


def edge_cosines(graph: Graph) -> np.ndarray:
    x = graph.features
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    dot = np.einsum("ij,ij->i", x[u], x[v])
    norm = np.linalg.norm(x[u], axis=1) * np.linalg.norm(x[v], axis=1)
    out = np.zeros(u.size)
    ok = norm > 0
    out[ok] = dot[ok] / norm[ok]
    return out


def prune_baseline(graph: Graph, similarity_threshold: float = 0.1) -> Graph:
    """Remove every edge whose endpoint features have cosine similarity below the threshold."""
    keep = edge_cosines(graph) >= similarity_threshold
    return replace_graph(graph, edges=graph.edges[keep])


# --------------------------------------------------------------------------- driver


@dataclass
class ExperimentMetrics:
    condition: str
    seed: int | str
    asr_percent: float | None = None
    acc_percent: float | None = None
    recall_tar_percent: float | None = None
    recall_tri_percent: float | None = None
    clean_acc_percent: float | None = None
    config_digest: str = ""

    def __post_init__(self):
        for f in METRIC_FIELDS:
            v = getattr(self, f)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{f}={v} outside [0, 100]")


def synthetic_spec(cfg: Config, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        num_nodes=cfg["data.num_nodes"],
        num_classes=cfg["data.num_classes"],
        intra_class_edge_prob=cfg["data.intra"],
        inter_class_edge_prob=cfg["data.inter"],
        feature_dim=cfg["data.feature_dim"],
        class_mean_separation=cfg["data.separation"],
        feature_noise_std=cfg["data.noise"],
        labeled_fraction=cfg["data.labeled_fraction"],
        seed=seed,
    )


def robust_config(cfg: Config, seed: int) -> RobustTrainConfig:
    return RobustTrainConfig(
        lam=cfg["robust.lambda"], a=cfg["robust.a"], b=cfg["robust.b"],
        epochs=cfg["train.epochs"], lr=cfg["train.lr"], weight_decay=cfg["train.weight_decay"],
        hidden_dim=cfg["train.hidden"], seed=seed, unlearn_cap=cfg["robust.cap"],
    )


def run_attack(cfg: Config, train_graph: Graph, seed: int):
    """Returns the poisoned training graph and its ground truth."""
    kind = cfg["attack.kind"]
    y_t = cfg["attack.target_label"]
    if kind == "feature":
        value = cfg["attack.trigger_value"]
        spec = FeatureAttackSpec(num_targets=cfg["attack.num_targets"],
                                 trigger_value=None if value == "auto" else float(value), seed=seed)
        return inject_feature_trigger(train_graph, spec, y_t)
    mode = {"subgraph_random": "random", "subgraph_similar": "target_similar",
            "subgraph_indist": "in_distribution"}[kind]
    spec = SubgraphAttackSpec(num_targets=cfg["attack.num_targets"], trigger_size=cfg["attack.trigger_size"],
                              feature_mode=mode, similar_noise=cfg["attack.similar_noise"], seed=seed)
    return inject_subgraph_trigger(train_graph, spec, y_t)


def run_defense(cfg: Config, graph: Graph, seed: int):
    """Both stages on a (possibly poisoned) training graph, truth-blind.

    Returns ``(report, pruned_graph, classifier)``.
    """
    crm = train_crm(graph, cfg["crm.alpha"], cfg["crm.beta"], cfg["crm.hidden"], cfg["crm.epochs"],
                    cfg["crm.lr"], stage_seed(seed, "crm"), cfg["crm.weight_decay"], cfg["crm.aggregation"])
    report = detect(crm, graph, cfg["detect.rho"], cfg["detect.tau"], cfg["detect.orientation"])
    pruned = prune_trigger_edges(graph, report.suspect_triggers)
    clf = train_robust(pruned, report, robust_config(cfg, stage_seed(seed, "classifier")))
    return report, pruned, clf


def _stage(name, seed, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # re-raised with the stage tag
        raise StageError(name, seed, exc) from exc


@dataclass
class PreparedSeed:
    """Everything before training: the split plus, when attacked, the poisoned views."""
    split: InductiveSplit
    train_graph: Graph
    truth: AttackGroundTruth | None
    poisoned_unseen: Graph | None


def prepare_seed(cfg: Config, seed: int) -> PreparedSeed:
    if cfg["data.path"]:
        graph = _stage("data", seed, load_graph, cfg["data.path"])
    else:
        graph = _stage("data", seed, generate_synthetic, synthetic_spec(cfg, stage_seed(seed, "data")))
    split = _stage("split", seed, split_inductive, graph, cfg["split.train_fraction"], stage_seed(seed, "split"))
    if cfg["attack.kind"] == "none":
        return PreparedSeed(split, split.train_graph, None, None)
    pg = _stage("attack", seed, run_attack, cfg, split.train_graph, stage_seed(seed, "attack"))
    poisoned_unseen = _stage("attack", seed, attach_test_triggers, split.unseen_graph, pg.truth,
                             split.unseen_poison_candidate_ids, stage_seed(seed, "test_trigger"))
    return PreparedSeed(split, pg.graph, pg.truth, poisoned_unseen)


def run_seed(cfg: Config, seed: int) -> list[ExperimentMetrics]:
    digest = cfg.digest()
    prep = prepare_seed(cfg, seed)
    split = prep.split
    unseen = split.unseen_graph
    clean_ids = split.unseen_clean_ids
    cand_ids = split.unseen_poison_candidate_ids
    tcfg = robust_config(cfg, stage_seed(seed, "classifier"))

    clean_model = _stage("clean_ref", seed, train_vanilla, split.train_graph, tcfg)
    clean_acc = acc(clean_model, unseen, clean_ids)
    rows = [ExperimentMetrics("clean_ref", seed, acc_percent=clean_acc, clean_acc_percent=clean_acc,
                              config_digest=digest)]

    attacked = prep.truth is not None
    truth, train_graph, poisoned_unseen = prep.truth, prep.train_graph, prep.poisoned_unseen
    y_t = cfg["attack.target_label"]

    def evaluate(condition, model, clean_view=unseen, poisoned_view=poisoned_unseen, **extra):
        row = ExperimentMetrics(condition, seed, acc_percent=acc(model, clean_view, clean_ids),
                                clean_acc_percent=clean_acc, config_digest=digest, **extra)
        if attacked:
            row.asr_percent = asr(model, poisoned_view, cand_ids, y_t, unseen.labels)
        return row

    model = _stage("undefended", seed, train_vanilla, train_graph, tcfg)
    rows.append(evaluate("undefended", model))

    if cfg["prune.enabled"]:
        thr = cfg["prune.threshold"]
        model = _stage("prune", seed, train_vanilla, prune_baseline(train_graph, thr), tcfg)
        rows.append(evaluate("prune", model, prune_baseline(unseen, thr),
                             prune_baseline(poisoned_unseen, thr) if attacked else None))

    if cfg["run.defense"]:
        report, _, model = _stage("cogbd", seed, run_defense, cfg, train_graph, seed)
        extra = {}
        if attacked:
            tar, tri = detection_recall(report, truth)
            extra = {"recall_tar_percent": tar, "recall_tri_percent": tri}
        rows.append(evaluate("cogbd", model, **extra))
    return rows


def _aggregate(rows: list[ExperimentMetrics], how) -> list[ExperimentMetrics]:
    out = []
    for cond in CONDITIONS:
        group = [r for r in rows if r.condition == cond]
        if not group:
            continue
        agg = ExperimentMetrics(cond, how.__name__, config_digest=group[0].config_digest)
        for f in METRIC_FIELDS:
            vals = [getattr(r, f) for r in group if getattr(r, f) is not None]
            if vals:
                setattr(agg, f, float(how(vals)))
        out.append(agg)
    return out


def mean(vals):
    return np.mean(vals)


def std(vals):
    return np.std(vals)


def run_experiment(cfg: Config) -> list[ExperimentMetrics]:
    """Per-seed rows (sorted by seed, then condition) followed by one mean row per condition."""
    cfg.validate()
    rows = []
    for seed in sorted(cfg["run.seeds"]):
        rows.extend(run_seed(cfg, seed))
    return rows + _aggregate(rows, mean)


def summary_std(rows: list[ExperimentMetrics]) -> list[ExperimentMetrics]:
    return _aggregate([r for r in rows if isinstance(r.seed, int)], std)


def rows_to_csv(rows: list[ExperimentMetrics]) -> str:
    buf = io.StringIO()
    cols = ["condition", "seed", *METRIC_FIELDS, "config_digest"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        d = asdict(r)
        w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in cols])
    return buf.getvalue()


def write_results(rows: list[ExperimentMetrics], outdir, cfg: Config | None = None) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": outdir / "metrics.csv", "json": outdir / "metrics.json"}
    paths["csv"].write_text(rows_to_csv(rows))
    doc = {"rows": [asdict(r) for r in rows], "std": [asdict(r) for r in summary_std(rows)]}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True))
    if cfg is not None:
        paths["config"] = outdir / "resolved_config.txt"
        paths["config"].write_text(cfg.to_text())
    return paths
