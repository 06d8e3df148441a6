import json

import pytest

from cogbd import detector, robust
from cogbd.cli import main
from cogbd.graph import load_graph
from cogbd.kernels import LayerParams
from cogbd.verify import run_checks

SMALL = ["--set", "data.num_nodes=200", "--set", "data.feature_dim=16", "--set", "crm.epochs=20",
         "--set", "train.epochs=20", "--set", "crm.hidden=8", "--set", "train.hidden=8"]


def run(tmp_path, *args):
    return main(["--out", str(tmp_path), *SMALL, *args])


def test_gen_deterministic(tmp_path, capsys):
    assert run(tmp_path / "a", "gen") == 0
    assert run(tmp_path / "b", "gen") == 0
    a, b = (tmp_path / "a" / "graph.json"), (tmp_path / "b" / "graph.json")
    assert a.read_bytes() == b.read_bytes()
    assert load_graph(a).num_nodes == 200
    assert (tmp_path / "a" / "resolved_config.txt").exists()


def test_gen_bad_probability(tmp_path):
    assert run(tmp_path, "--set", "data.intra=1.5", "gen") == 2


def test_usage_errors(tmp_path):
    assert run(tmp_path, "attack", str(tmp_path / "missing.json")) == 2
    assert run(tmp_path, "--set", "nope=1", "gen") == 2
    assert run(tmp_path, "--set", "crm.alpha", "gen") == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("COGBD_OUT_DIR", str(tmp_path / "env"))
    assert main([*SMALL, "gen"]) == 0
    assert (tmp_path / "env" / "graph.json").exists()


def test_feature_attack_on_wide_graph(tmp_path):
    assert run(tmp_path, "--set", "data.feature_dim=500", "gen") == 0
    assert run(tmp_path, "--set", "attack.kind=feature", "attack", str(tmp_path / "graph.json")) == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["trigger_dims"]) == 10


def test_pipeline_commands(tmp_path):
    g = tmp_path / "graph.json"
    assert run(tmp_path, "gen") == 0
    art = tmp_path / "art"
    assert run(art, "--set", "attack.kind=subgraph_random", "attack", str(g)) == 0
    truth = json.loads((art / "truth.json").read_text())
    assert len(truth["trigger_nodes"]) == 3 * len(truth["target_nodes"])

    assert run(tmp_path / "audit", "audit", str(art / "poisoned.json"), "--truth", str(art / "truth.json")) == 0
    assert "target" in (tmp_path / "audit" / "audit.csv").read_text()

    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    assert run(d1, "defend", str(art / "poisoned.json")) == 0
    assert run(d2, "defend", str(art / "poisoned.json")) == 0
    report = json.loads((d1 / "report.json").read_text())
    assert report["rho"] == 0.03
    assert report["num_nodes"] == load_graph(art / "poisoned.json").num_nodes
    for name in ("report.json", "report.csv", "pruned.json", "classifier.json", "trace.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    ev = tmp_path / "ev"
    assert run(ev, "eval", str(d1 / "classifier.json"), "--artifacts", str(art), "--report", str(d1 / "report.json")) == 0
    header, row = (ev / "metrics.csv").read_text().splitlines()
    assert header.startswith("condition,seed,asr_percent") and row.startswith("cogbd,0,")


def test_run_command_byte_identical(tmp_path):
    args = ["--set", "run.seeds=0", "--set", "attack.num_targets=3", "run"]
    assert run(tmp_path / "r1", *args) == 0
    assert run(tmp_path / "r2", *args) == 0
    assert (tmp_path / "r1" / "metrics.csv").read_bytes() == (tmp_path / "r2" / "metrics.csv").read_bytes()


def test_verify_passes(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 8


def test_verify_catches_sign_bug(monkeypatch):
    real = detector.gcn_backward

    def flipped(tape, d_out, l2):
        g1, g2 = real(tape, d_out, l2)
        return LayerParams(-g1.weight, g1.bias), g2

    monkeypatch.setattr(detector, "gcn_backward", flipped)
    monkeypatch.setattr(robust, "gcn_backward", flipped)
    failed = {r.name for r in run_checks() if not r.passed}
    assert {"crm_grad", "robust_grad"} <= failed
