"""Command-line front end: ``cogbd <command> [options]``.

Exit codes: 0 success, 1 internal failure, 2 usage or configuration error.
Output goes to ``--out``, else ``$COGBD_OUT_DIR``, else the current directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .attacks import AttackError, attach_test_triggers, load_truth, save_truth
from .config import Config, ConfigError, load_config, stage_seed
from .detector import DetectionReport
from .evaluation import (
    ExperimentMetrics,
    StageError,
    acc,
    asr,
    detection_recall,
    run_attack,
    run_defense,
    run_experiment,
    synthetic_spec,
    write_results,
)
from .graph import GraphError, generate_synthetic, load_graph, save_graph, split_inductive
from .homophily import homophily_audit
from .kernels import load_checkpoint, save_checkpoint
from .robust import RobustClassifier
from .verify import run_checks

OUT_ENV = "COGBD_OUT_DIR"
USAGE_ERRORS = (ConfigError, GraphError, AttackError, OSError)

log = logging.getLogger("cogbd")


class UsageError(Exception):
    pass


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_gen(args, cfg: Config, out: Path) -> None:
    g = generate_synthetic(synthetic_spec(cfg, stage_seed(args.seed, "data")))
    path = save_graph(g, out / args.name)
    print(path)
    print(f"nodes={g.num_nodes} edges={g.num_edges} features={g.num_features} "
          f"classes={g.num_classes} labeled={int(g.labeled_mask.sum())}")


def cmd_attack(args, cfg: Config, out: Path) -> None:
    if cfg["attack.kind"] == "none":
        raise UsageError("attack.kind is 'none'; nothing to inject")
    g = load_graph(_require(args.graph, "graph"))
    if args.no_split:
        pg = run_attack(cfg, g, stage_seed(args.seed, "attack"))
        save_graph(pg.graph, out / "poisoned.json")
        save_truth(pg.truth, out / "truth.json")
    else:
        split = split_inductive(g, cfg["split.train_fraction"], stage_seed(args.seed, "split"))
        pg = run_attack(cfg, split.train_graph, stage_seed(args.seed, "attack"))
        unseen_p = attach_test_triggers(split.unseen_graph, pg.truth, split.unseen_poison_candidate_ids,
                                        stage_seed(args.seed, "test_trigger"))
        save_graph(pg.graph, out / "poisoned.json")
        save_truth(pg.truth, out / "truth.json")
        save_graph(split.unseen_graph, out / "unseen.json")
        save_graph(unseen_p, out / "unseen_poisoned.json")
        _write_json(out / "split.json", {
            "train_node_ids": split.train_node_ids.tolist(),
            "unseen_node_ids": split.unseen_node_ids.tolist(),
            "unseen_clean_ids": split.unseen_clean_ids.tolist(),
            "unseen_poison_candidate_ids": split.unseen_poison_candidate_ids.tolist(),
        })
    t = pg.truth
    print(out / "poisoned.json")
    print(f"kind={t.attack_kind} targets={len(t.target_nodes)} trigger_nodes={len(t.trigger_nodes)} "
          f"trigger_dims={len(t.trigger_dims or [])} target_label={t.target_label}")


def cmd_audit(args, cfg: Config, out: Path) -> None:
    g = load_graph(_require(args.graph, "graph"))
    if args.truth:
        t = load_truth(_require(args.truth, "truth"))
        poisoned = set(t.target_nodes) | set(t.trigger_nodes)
        groups = {
            "target": t.target_nodes,
            "trigger": t.trigger_nodes,
            "clean": [v for v in range(g.num_nodes) if v not in poisoned],
        }
    else:
        groups = {"all": range(g.num_nodes)}
    audit = homophily_audit(g, groups)
    (out / "audit.json").write_text(audit.to_json())
    (out / "audit.csv").write_text(audit.to_csv())
    sys.stdout.write(audit.to_csv())


def cmd_defend(args, cfg: Config, out: Path) -> None:
    g = load_graph(_require(args.graph, "graph"))
    report, pruned, clf = run_defense(cfg, g, args.seed)
    _write_json(out / "report.json", report.to_dict())
    with open(out / "report.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report.csv_rows())
    save_graph(pruned, out / "pruned.json")
    save_checkpoint(out / "classifier.json", clf.params, {"num_classes": clf.num_classes})
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "positive_term", "negative_term", "total"])
        w.writerows([e, repr(p), repr(n), repr(t)] for e, p, n, t in clf.trace)
    print(out / "report.json")
    print(f"suspects={len(report.suspect_all)} triggers={len(report.suspect_triggers)} "
          f"targets={len(report.suspect_targets)} pruned_edges={g.num_edges - pruned.num_edges}")


def cmd_eval(args, cfg: Config, out: Path) -> None:
    params, meta = load_checkpoint(_require(args.classifier, "classifier"))
    clf = RobustClassifier(params, int(meta.get("num_classes", params["gcn2.bias"].size)))
    art = Path(args.artifacts)
    unseen = load_graph(_require(str(art / "unseen.json"), "unseen graph"))
    split = json.loads(_require(str(art / "split.json"), "split").read_text())
    truth = load_truth(_require(args.truth or str(art / "truth.json"), "truth"))
    poisoned = load_graph(_require(str(art / "unseen_poisoned.json"), "poisoned unseen graph"))
    row = ExperimentMetrics(args.condition, args.seed, config_digest=cfg.digest())
    row.acc_percent = acc(clf, unseen, split["unseen_clean_ids"])
    row.asr_percent = asr(clf, poisoned, split["unseen_poison_candidate_ids"], truth.target_label, unseen.labels)
    if args.report:
        doc = json.loads(_require(args.report, "report").read_text())
        row.recall_tar_percent, row.recall_tri_percent = detection_recall(DetectionReport.from_dict(doc), truth)
    paths = write_results([row], out)
    sys.stdout.write(paths["csv"].read_text())


def cmd_run(args, cfg: Config, out: Path) -> None:
    rows = run_experiment(cfg)
    paths = write_results(rows, out)
    sys.stdout.write(paths["csv"].read_text())


def cmd_verify(args, cfg: Config, out: Path) -> int:
    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cogbd", description="Graph backdoor defense workbench")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--seed", type=int, default=0, help="top-level seed for single-run commands")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="generate a synthetic graph")
    s.add_argument("--name", default="graph.json")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("attack", help="split a graph and poison its training part")
    s.add_argument("graph")
    s.add_argument("--no-split", action="store_true", help="poison the whole graph, no unseen part")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("audit", help="feature homophily per node group")
    s.add_argument("graph")
    s.add_argument("--truth")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("defend", help="detect, prune and robustly train (never reads ground truth)")
    s.add_argument("graph")
    s.set_defaults(func=cmd_defend)

    s = sub.add_parser("eval", help="ASR / ACC of a classifier checkpoint on attack artifacts")
    s.add_argument("classifier")
    s.add_argument("--artifacts", default=".", help="directory written by 'attack'")
    s.add_argument("--truth")
    s.add_argument("--report", help="detection report for recall columns")
    s.add_argument("--condition", default="cogbd")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="end-to-end experiment over run.seeds")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("verify", help="gradient, identity and score self-checks")
    s.set_defaults(func=cmd_verify)
    return p


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args.set))
        cfg.validate()
        out = Path(args.out or os.environ.get(OUT_ENV) or ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.txt").write_text(cfg.to_text())
        code = args.func(args, cfg, out)
        return int(code or 0)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"cogbd: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"cogbd: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, USAGE_ERRORS) else 1
    except Exception as exc:
        log.debug("internal failure", exc_info=True)
        print(f"cogbd: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
