"""Command-line interface: run experiments, inspect partitions, compare runs.

BLAS thread pools are pinned to one thread before numpy loads: multi-thread
reductions can reorder float sums, and byte-identical output across worker
counts is part of the contract.  Parallelism comes from the client-level
worker pool instead.
"""

from __future__ import annotations

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import sys

from . import config as config_mod
from . import experiment
from .errors import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, SimulatorError


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )


def _resolve_from_args(args) -> dict:
    raw = config_mod.load_config_file(args.config) if args.config else {}
    overrides = list(args.overrides)
    for name in ("seed", "method", "workers", "out"):
        value = getattr(args, name, None)
        if value is not None:
            overrides.append(f"{name}={value}")
    return config_mod.resolve(raw, overrides)


def _cmd_run(args) -> int:
    cfg = _resolve_from_args(args)
    summary = experiment.run(cfg)
    acc = f"{summary['acc_all']:.4f}"
    print(f"{summary['method']} seed={summary['seed']} acc_all={acc} -> {cfg['out']}")
    return EXIT_OK


def _cmd_partition_report(args) -> int:
    cfg = _resolve_from_args(args)
    names, table = experiment.partition_report(cfg)
    print("client," + ",".join(names))
    for k, row in enumerate(table):
        print(f"{k}," + ",".join(str(int(v)) for v in row))
    return EXIT_OK


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _cmd_compare(args) -> int:
    rows = experiment.compare(args.dirs)
    rows.sort(key=lambda r: (r["method"], r["seed"]))
    header = ["method", "seed", "acc_all", "acc_many", "acc_medium", "acc_few"]
    print("\t".join(header))
    by_method: dict[str, list[dict]] = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
        print(
            "\t".join(
                [
                    r["method"],
                    str(r["seed"]),
                    _fmt(r.get("acc_all")),
                    _fmt(r.get("acc_many")),
                    _fmt(r.get("acc_medium")),
                    _fmt(r.get("acc_few")),
                ]
            )
        )
    for method in sorted(by_method):
        group = by_method[method]
        means = []
        for key in ("acc_all", "acc_many", "acc_medium", "acc_few"):
            vals = [r[key] for r in group if r.get(key) is not None]
            means.append(_fmt(sum(vals) / len(vals)) if vals else "-")
        print("\t".join([f"{method}:mean", str(len(group))] + means))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2fl",
        description=(
            "Deterministic federated-learning simulator with teacher-guided "
            "distillation and federated-feature classifier retraining"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment")
    _add_config_args(p_run)
    p_run.add_argument("--seed", type=int, help="master seed")
    p_run.add_argument(
        "--method", choices=("fedavg", "clip2fl", "no_pcl", "no_kd"), help="training method"
    )
    p_run.add_argument("--workers", type=int, help="client worker threads")
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_part = sub.add_parser("partition-report", help="print the client/class count table")
    _add_config_args(p_part)
    p_part.set_defaults(func=_cmd_partition_report)

    p_cmp = sub.add_parser("compare", help="merge final summaries of finished runs")
    p_cmp.add_argument("dirs", nargs="+", help="run output directories")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SimulatorError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, FloatingPointError) as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
