"""End-to-end experiment assembly and execution from a resolved config.

build() turns a config into data, shards, teacher, model, and server state;
run() executes the rounds and writes metrics.jsonl, final.json, and
config.resolved.json into the output directory.  Identical configs and
seeds give byte-identical outputs for any worker count: client jobs are
pure functions merged in client-index order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import rngs, server
from .data import LabeledDataset, Partition, PartitionSpec
from .errors import ConfigError, FormatError, NumericError
from .metrics import RoundMetrics
from .model import ModelParams, init_params
from .server import EvalContext, RoundConfig, ServerState, init_bank
from .teacher import FileTeacher, StubTeacher

Array = np.ndarray


@dataclass(frozen=True)
class Experiment:
    """Everything needed to run rounds, fully determined by the config."""

    cfg: dict
    train: LabeledDataset
    test: LabeledDataset
    counts: Array
    groups: dict[str, Array]
    partition: Partition
    shards: tuple[LabeledDataset, ...]
    teacher: object | None
    round_cfg: RoundConfig
    eval_ctx: EvalContext
    initial_state: ServerState


def _build_dataset(cfg: dict) -> tuple[LabeledDataset, LabeledDataset, Array]:
    d = cfg["dataset"]
    if d["kind"] == "blobs":
        return data_mod.blob_benchmark(
            d["num_classes"],
            d["input_dim"],
            d["n_max"],
            d["imbalance"],
            d["n_test_per_class"],
            d["spread"],
            d["separation"],
            cfg["seed"],
        )
    root = Path(d["path"])
    train = data_mod.load_dataset_dir(root / "train")
    test = data_mod.load_dataset_dir(root / "test")
    if train.class_names != test.class_names:
        raise FormatError("train and test class names differ")
    counts = train.class_counts()
    if np.any(counts < 1):
        raise FormatError("imported training set must cover every class")
    return train, test, counts


def _build_teacher(cfg: dict, train: LabeledDataset):
    if cfg["method"] == "fedavg":
        return None
    te = cfg["teacher"]
    feature_dim = cfg["model"]["feature_dim"]
    if te["kind"] == "stub":
        dim = te["dim"] if te["dim"] is not None else feature_dim
        teacher = StubTeacher(
            train.class_names, dim, cfg["seed"], te["sigma"], te["prompt_template"]
        )
    else:
        teacher = FileTeacher(te["path"], train.class_names)
    if teacher.dim != feature_dim:
        raise ConfigError(
            f"teacher.dim: embedding dim {teacher.dim} must equal "
            f"model.feature_dim {feature_dim} for synthesis"
        )
    return teacher


def _balanced_probe(test: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    """Class-balanced probe drawn from the test set, seeded."""
    quota = data_mod.largest_remainder(np.ones(test.num_classes), size)
    have = test.class_counts()
    short = np.where(quota > have)[0]
    if short.size:
        c = int(short[0])
        raise ConfigError(
            f"metrics.cka_probe: class {c} has {have[c]} test samples, "
            f"probe needs {quota[c]}"
        )
    g = rngs.generator(seed, rngs.PROBE)
    keep = []
    for c in range(test.num_classes):
        idx = np.where(test.labels == c)[0]
        keep.append(np.sort(g.choice(idx, size=quota[c], replace=False)))
    return test.take(np.concatenate(keep))


def build(cfg: dict) -> Experiment:
    seed = cfg["seed"]
    train, test, counts = _build_dataset(cfg)
    groups = data_mod.split_many_medium_few(
        counts, cfg["groups"]["many_min"], cfg["groups"]["few_max"]
    )
    p = cfg["partition"]
    pseed = p["seed"] if p["seed"] is not None else seed
    partition = data_mod.dirichlet_partition(
        train, PartitionSpec(p["num_clients"], p["alpha"], pseed)
    )
    shards = partition.shards(train)

    m = cfg["model"]
    params = init_params(
        train.input_dim,
        tuple(m["hidden_sizes"]),
        m["feature_dim"],
        train.num_classes,
        rngs.derive_seed(seed, rngs.MODEL_INIT),
    )
    teacher = _build_teacher(cfg, train)
    bank = init_bank(train.num_classes, cfg["server"]["m"], m["feature_dim"], seed)

    probe = None
    if cfg["metrics"]["cka"]:
        probe = _balanced_probe(test, cfg["metrics"]["cka_probe"], seed)

    s, t = cfg["server"], cfg["training"]
    round_cfg = RoundConfig(
        method=cfg["method"],
        client_fraction=s["fraction"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr_local=t["lr_local"],
        momentum=t["momentum"],
        beta=t["beta"],
        per_class_cap=s["per_class_cap"],
        logit_scale=cfg["teacher"]["logit_scale"],
        feature_steps=s["feature_steps"],
        feature_lr=s["feature_lr"],
        eta_pcl=s["eta_pcl"],
        tau=s["tau"],
        pcl_variant=s["pcl_variant"],
        retrain_steps=s["retrain_steps"],
        retrain_lr=s["retrain_lr"],
        retrain_batch=s["retrain_batch"],
    )
    eval_ctx = EvalContext(test=test, train=train, groups=groups, probe=probe)
    initial_state = ServerState(params, params.phi, bank, 0)
    return Experiment(
        cfg=cfg,
        train=train,
        test=test,
        counts=counts,
        groups=groups,
        partition=partition,
        shards=shards,
        teacher=teacher,
        round_cfg=round_cfg,
        eval_ctx=eval_ctx,
        initial_state=initial_state,
    )


def _check_finite(rm: RoundMetrics) -> None:
    values = [rm.acc_all, rm.acc_many, rm.acc_medium, rm.acc_few,
              rm.loss_grad, rm.loss_pcl, rm.cka_mean]
    values += list(rm.grad_dissim.values()) + list(rm.feat_dissim.values())
    for v in values:
        if v is not None and not np.isfinite(v):
            raise NumericError(f"non-finite metric in round {rm.round}")


def run_rounds(exp: Experiment, on_metrics=None) -> list[RoundMetrics]:
    """Execute every round; on_metrics (if given) sees each round's metrics."""
    cfg = exp.cfg
    state = exp.initial_state
    history: list[RoundMetrics] = []
    workers = cfg["workers"]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    client_map = pool.map if pool else map
    try:
        for _ in range(cfg["training"]["rounds"]):
            state, rm = server.run_round(
                state,
                exp.shards,
                exp.teacher,
                exp.round_cfg,
                cfg["seed"],
                exp.eval_ctx,
                client_map,
            )
            _check_finite(rm)
            history.append(rm)
            if on_metrics:
                on_metrics(rm)
    finally:
        if pool:
            pool.shutdown()
    return history


def run(cfg: dict) -> dict:
    """Run the experiment and write metrics.jsonl, final.json, and
    config.resolved.json under cfg['out'].  Returns the final summary."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2) + "\n")

    exp = build(cfg)
    with open(out / "metrics.jsonl", "w") as fh:
        def emit(rm: RoundMetrics) -> None:
            fh.write(json.dumps(rm.to_json_dict(), allow_nan=False) + "\n")

        history = run_rounds(exp, emit)

    last = history[-1]
    summary = {
        "method": cfg["method"],
        "seed": cfg["seed"],
        "rounds": cfg["training"]["rounds"],
        "acc_all": last.acc_all,
        "acc_many": last.acc_many,
        "acc_medium": last.acc_medium,
        "acc_few": last.acc_few,
    }
    (out / "final.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def partition_report(cfg: dict) -> tuple[list[str], Array]:
    """Class names plus the K x C per-client per-class count table."""
    exp = build(cfg)
    return list(exp.train.class_names), exp.partition.count_table(exp.train)


def compare(run_dirs: list[str | Path]) -> list[dict]:
    """Merge final.json summaries from several run directories."""
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    rows = []
    for rd in run_dirs:
        p = Path(rd) / "final.json"
        if not p.is_file():
            raise FormatError(f"missing run summary: {p}")
        try:
            rows.append(json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise FormatError(f"unreadable run summary {p}: {e}") from e
    for row in rows:
        for key in ("method", "seed", "acc_all"):
            if key not in row:
                raise FormatError(f"run summary missing key {key!r}")
    return rows
