import pytest

from cogbd.config import Config, ConfigError, DEFAULTS, load_config, parse_config_text, stage_seed


def test_defaults_and_typed_set():
    cfg = Config()
    assert cfg["detect.rho"] == 0.03 and cfg["robust.lambda"] == 0.1 and cfg["attack.trigger_size"] == 3
    cfg.set("crm.alpha", "2")
    cfg.set("run.seeds", "1, 2 3")
    cfg.set("prune.enabled", "off")
    assert cfg["crm.alpha"] == 2.0 and cfg["run.seeds"] == [1, 2, 3] and cfg["prune.enabled"] is False


def test_rejections():
    with pytest.raises(ConfigError):
        Config({"no.such": 1})
    with pytest.raises(ConfigError):
        Config({"crm.epochs": "many"})
    with pytest.raises(ConfigError):
        Config({"attack.kind": "magic"})
    with pytest.raises(ConfigError):
        Config({"run.seeds": ""}).validate()
    with pytest.raises(ConfigError):
        Config({"data.path": "/no/such/file.json"}).validate()
    with pytest.raises(ConfigError):
        parse_config_text("just words")


def test_file_then_flags(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\ncrm.alpha = 3\ndetect.rho = 0.05  # inline\n")
    cfg = load_config(p, {"crm.alpha": "4"})
    assert cfg["crm.alpha"] == 4.0 and cfg["detect.rho"] == 0.05


def test_text_round_trip():
    cfg = Config({"run.seeds": "3 4", "attack.kind": "subgraph_random"})
    assert load_config(None, parse_config_text(cfg.to_text())) == cfg
    assert set(parse_config_text(cfg.to_text())) == set(DEFAULTS)


def test_digest_ignores_seeds_only():
    a, b = Config({"run.seeds": "0"}), Config({"run.seeds": "7"})
    assert a.digest() == b.digest()
    assert a.digest() != Config({"crm.alpha": "2"}).digest()


def test_stage_seeds_distinct_and_stable():
    seeds = {stage_seed(0, s) for s in ("data", "split", "attack", "test_trigger", "classifier", "crm")}
    assert len(seeds) == 6
    assert stage_seed(3, "crm") == stage_seed(3, "crm")
    with pytest.raises(ValueError):
        stage_seed(0, "unknown")
