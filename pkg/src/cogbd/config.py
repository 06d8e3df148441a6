"""Flat dotted-key configuration shared by the experiment driver and the CLI.

Files hold ``key = value`` lines (``#`` starts a comment). Values are parsed
according to the type of the default. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

DEFAULTS: dict[str, object] = {
    # synthetic data (ignored when data.path is set)
    "data.path": "",
    "data.num_nodes": 1000,
    "data.num_classes": 5,
    "data.intra": 0.05,
    "data.inter": 0.005,
    "data.feature_dim": 64,
    "data.separation": 1.0,
    "data.noise": 0.3,
    "data.labeled_fraction": 0.3,
    "split.train_fraction": 0.8,
    # attack
    "attack.kind": "feature",
    "attack.num_targets": 6,
    "attack.target_label": 0,
    "attack.trigger_size": 3,
    "attack.similar_noise": 3.0,
    "attack.trigger_value": "auto",
    # stage I
    "crm.alpha": 1.0,
    "crm.beta": 1.0,
    "crm.hidden": 64,
    "crm.epochs": 200,
    "crm.lr": 0.01,
    "crm.weight_decay": 5e-4,
    "crm.aggregation": "mean",
    "detect.rho": 0.03,
    "detect.tau": 0.5,
    "detect.orientation": "increasing",
    # stage II and the plain classifier
    "robust.lambda": 0.1,
    "robust.a": 2.0,
    "robust.b": 2.0,
    "robust.cap": "stop_below_uniform",
    "train.hidden": 64,
    "train.epochs": 200,
    "train.lr": 0.01,
    "train.weight_decay": 5e-4,
    # baselines and driver
    "prune.enabled": True,
    "prune.threshold": 0.1,
    "run.defense": True,
    "run.seeds": [0, 1, 2, 3, 4],
}

CHOICES = {
    "attack.kind": ("none", "feature", "subgraph_random", "subgraph_similar", "subgraph_indist"),
    "crm.aggregation": ("sum", "mean"),
    "detect.orientation": ("increasing", "literal"),
    "robust.cap": ("stop_below_uniform", "clamp_at_logK", "none"),
}

# fixed stage ids for seed fan-out; never renumber
STAGES = ("data", "split", "attack", "test_trigger", "classifier", "crm")


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(x) for x in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc
    return raw


class Config(dict):
    """Resolved configuration: every key of :data:`DEFAULTS`, nothing else."""

    def __init__(self, values: dict | None = None):
        super().__init__(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value)
        elif isinstance(DEFAULTS[key], float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {value!r}")
        self[key] = value

    def validate(self) -> None:
        if not self["run.seeds"]:
            raise ConfigError("run.seeds must not be empty")
        if self["data.path"] and not Path(self["data.path"]).exists():
            raise ConfigError(f"data.path {self['data.path']!r} does not exist")
        if not 0.0 < self["detect.rho"] < 1.0:
            raise ConfigError("detect.rho must lie in (0, 1)")
        if self["detect.tau"] <= 0:
            raise ConfigError("detect.tau must be > 0")
        for k in ("data.intra", "data.inter"):
            if not 0.0 <= self[k] <= 1.0:
                raise ConfigError(f"{k} must lie in [0, 1]")

    def digest(self) -> str:
        """sha256 of the canonical JSON form, excluding the seed list."""
        body = {k: v for k, v in sorted(self.items()) if k != "run.seeds"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = []
        for k in sorted(self):
            v = self[k]
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> Config:
    """File values first, then ``overrides`` (flags) on top."""
    cfg = Config()
    if path is not None:
        for k, v in parse_config_text(Path(path).read_text()).items():
            cfg.set(k, v)
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    return cfg


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage seed: SeedSequence(entropy=seed, spawn_key=(stage index,)) -> one uint32."""
    sq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STAGES.index(stage),))
    return int(sq.generate_state(1)[0])

