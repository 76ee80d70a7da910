"""Experiment configuration: defaults, file loading, overrides, validation.

Configs are nested JSON objects.  Unknown keys are rejected so typos fail
loudly; every default actually used is echoed into the resolved config the
runner writes next to its outputs.  Ablation methods force their switch
(no_pcl zeroes the contrastive weight, no_kd zeroes distillation, fedavg
zeroes distillation and skips the server pipeline) and the forced values
appear in the resolved config.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError, FormatError
from .server import METHODS, PCL_VARIANTS

DEFAULTS: dict = {
    "method": "clip2fl",
    "seed": 0,
    "workers": 1,
    "out": "run_out",
    "dataset": {
        "kind": "blobs",
        "path": None,
        "num_classes": 10,
        "input_dim": 32,
        "n_max": 500,
        "imbalance": 100.0,
        "n_test_per_class": 100,
        "spread": 1.0,
        "separation": 4.0,
    },
    "partition": {
        "num_clients": 20,
        "alpha": 1.0,
        "seed": None,
    },
    "model": {
        "hidden_sizes": [64],
        "feature_dim": 32,
    },
    "training": {
        "rounds": 50,
        "epochs": 5,
        "batch_size": 32,
        "lr_local": 0.05,
        "momentum": 0.0,
        "beta": 3.0,
    },
    "server": {
        "fraction": 0.4,
        "m": 10,
        "feature_steps": 300,
        "feature_lr": 2.0,
        "eta_pcl": 1e-05,
        "tau": 1.0,
        "pcl_variant": "literal",
        "retrain_steps": 300,
        "retrain_lr": 0.01,
        "retrain_batch": None,
        "per_class_cap": 64,
    },
    "teacher": {
        "kind": "stub",
        "path": None,
        "dim": None,
        "sigma": 0.3,
        "logit_scale": 100.0,
        "prompt_template": "This is a {name}",
    },
    "groups": {
        "many_min": 100,
        "few_max": 20,
    },
    "metrics": {
        "cka": False,
        "cka_probe": 256,
    },
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a section object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    return raw


def parse_set_override(expr: str) -> tuple[list[str], object]:
    """Parse a dotted override like server.tau=0.2; values parse as JSON,
    falling back to a bare string."""
    key, sep, value = expr.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like section.key=value, got {expr!r}")
    parts = key.split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return parts, parsed


def apply_override(cfg: dict, parts: list[str], value: object) -> None:
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {'.'.join(parts)}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key: {'.'.join(parts)}")
    node[parts[-1]] = value


def _need(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {message}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def resolve(raw: dict | None = None, overrides: list[str] | None = None) -> dict:
    """Merge defaults, file values, and --set overrides; validate; apply
    method forcing.  Returns the fully resolved config."""
    cfg = _merge(DEFAULTS, raw or {})
    for expr in overrides or []:
        parts, value = parse_set_override(expr)
        apply_override(cfg, parts, value)
    validate(cfg)

    if cfg["method"] == "no_pcl":
        cfg["server"]["eta_pcl"] = 0.0
    if cfg["method"] in ("no_kd", "fedavg"):
        cfg["training"]["beta"] = 0.0
    return cfg


def validate(cfg: dict) -> None:
    _need(cfg["method"] in METHODS, "method", f"must be one of {list(METHODS)}")
    _need(_is_int(cfg["seed"]) and cfg["seed"] >= 0, "seed", "must be an integer >= 0")
    _need(_is_int(cfg["workers"]) and cfg["workers"] >= 1, "workers", "must be >= 1")
    _need(isinstance(cfg["out"], str) and cfg["out"], "out", "must be a path string")

    d = cfg["dataset"]
    _need(d["kind"] in ("blobs", "import"), "dataset.kind", "must be 'blobs' or 'import'")
    if d["kind"] == "import":
        _need(isinstance(d["path"], str) and d["path"], "dataset.path", "required for imports")
    _need(_is_int(d["num_classes"]) and d["num_classes"] >= 2, "dataset.num_classes", "must be >= 2")
    _need(_is_int(d["input_dim"]) and d["input_dim"] >= 1, "dataset.input_dim", "must be >= 1")
    _need(_is_int(d["n_max"]) and d["n_max"] >= 1, "dataset.n_max", "must be >= 1")
    _need(_is_num(d["imbalance"]) and d["imbalance"] >= 1, "dataset.imbalance", "must be >= 1")
    _need(d["n_max"] >= d["imbalance"], "dataset.n_max", "must be >= dataset.imbalance")
    _need(
        _is_int(d["n_test_per_class"]) and d["n_test_per_class"] >= 1,
        "dataset.n_test_per_class", "must be >= 1",
    )
    _need(_is_num(d["spread"]) and d["spread"] >= 0, "dataset.spread", "must be >= 0")
    _need(_is_num(d["separation"]) and d["separation"] >= 0, "dataset.separation", "must be >= 0")

    p = cfg["partition"]
    _need(_is_int(p["num_clients"]) and p["num_clients"] >= 1, "partition.num_clients", "must be >= 1")
    _need(_is_num(p["alpha"]) and p["alpha"] > 0, "partition.alpha", "must be > 0")
    _need(
        p["seed"] is None or (_is_int(p["seed"]) and p["seed"] >= 0),
        "partition.seed", "must be null or an integer >= 0",
    )

    m = cfg["model"]
    _need(
        isinstance(m["hidden_sizes"], list)
        and all(_is_int(h) and h >= 1 for h in m["hidden_sizes"]),
        "model.hidden_sizes", "must be a list of positive integers",
    )
    _need(_is_int(m["feature_dim"]) and m["feature_dim"] >= 1, "model.feature_dim", "must be >= 1")

    t = cfg["training"]
    _need(_is_int(t["rounds"]) and t["rounds"] >= 1, "training.rounds", "must be >= 1")
    _need(_is_int(t["epochs"]) and t["epochs"] >= 1, "training.epochs", "must be >= 1")
    _need(_is_int(t["batch_size"]) and t["batch_size"] >= 1, "training.batch_size", "must be >= 1")
    _need(_is_num(t["lr_local"]) and t["lr_local"] >= 0, "training.lr_local", "must be >= 0")
    _need(
        _is_num(t["momentum"]) and 0 <= t["momentum"] < 1,
        "training.momentum", "must lie in [0, 1)",
    )
    _need(_is_num(t["beta"]) and t["beta"] >= 0, "training.beta", "must be >= 0")

    s = cfg["server"]
    _need(_is_num(s["fraction"]) and 0 < s["fraction"] <= 1, "server.fraction", "must lie in (0, 1]")
    _need(_is_int(s["m"]) and s["m"] >= 1, "server.m", "must be >= 1")
    _need(_is_int(s["feature_steps"]) and s["feature_steps"] >= 0, "server.feature_steps", "must be >= 0")
    _need(_is_num(s["feature_lr"]) and s["feature_lr"] >= 0, "server.feature_lr", "must be >= 0")
    _need(_is_num(s["eta_pcl"]) and s["eta_pcl"] >= 0, "server.eta_pcl", "must be >= 0")
    _need(_is_num(s["tau"]) and s["tau"] > 0, "server.tau", "must be > 0")
    _need(s["pcl_variant"] in PCL_VARIANTS, "server.pcl_variant", f"must be one of {list(PCL_VARIANTS)}")
    _need(_is_int(s["retrain_steps"]) and s["retrain_steps"] >= 0, "server.retrain_steps", "must be >= 0")
    _need(_is_num(s["retrain_lr"]) and s["retrain_lr"] >= 0, "server.retrain_lr", "must be >= 0")
    _need(
        s["retrain_batch"] is None or (_is_int(s["retrain_batch"]) and s["retrain_batch"] >= 1),
        "server.retrain_batch", "must be null or >= 1",
    )
    _need(_is_int(s["per_class_cap"]) and s["per_class_cap"] >= 1, "server.per_class_cap", "must be >= 1")

    te = cfg["teacher"]
    _need(te["kind"] in ("stub", "file"), "teacher.kind", "must be 'stub' or 'file'")
    if te["kind"] == "file":
        _need(isinstance(te["path"], str) and te["path"], "teacher.path", "required for file teachers")
    _need(
        te["dim"] is None or (_is_int(te["dim"]) and te["dim"] >= 1),
        "teacher.dim", "must be null or >= 1",
    )
    _need(_is_num(te["sigma"]) and te["sigma"] >= 0, "teacher.sigma", "must be >= 0")
    _need(
        _is_num(te["logit_scale"]) and te["logit_scale"] >= 0,
        "teacher.logit_scale", "must be >= 0",
    )
    _need(
        isinstance(te["prompt_template"], str) and "{name}" in te["prompt_template"],
        "teacher.prompt_template", "must contain '{name}'",
    )

    g = cfg["groups"]
    _need(
        _is_int(g["many_min"]) and _is_int(g["few_max"]) and g["many_min"] > g["few_max"] > 0,
        "groups.many_min", "thresholds must satisfy many_min > few_max > 0",
    )

    me = cfg["metrics"]
    _need(isinstance(me["cka"], bool), "metrics.cka", "must be true or false")
    _need(_is_int(me["cka_probe"]) and me["cka_probe"] >= 2, "metrics.cka_probe", "must be >= 2")

    # The contrastive term compares bank features with teacher prototypes,
    # so their dimensions must agree for every method that synthesizes.
    if cfg["method"] != "fedavg" and te["kind"] == "stub":
        eff_dim = te["dim"] if te["dim"] is not None else m["feature_dim"]
        _need(
            eff_dim == m["feature_dim"],
            "teacher.dim", f"must equal model.feature_dim ({m['feature_dim']}) for synthesis",
        )
