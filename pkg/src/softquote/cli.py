"""Command-line entry point: one subcommand per experiment."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, ExperimentConfig, emit_report, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softquote",
                                     description="Run a market-making convergence experiment.")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT",
                                help=", ".join(EXPERIMENTS))
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with experiment settings and a 'params' object")
        p.add_argument("--out", help="directory for CSV tables and summary.json")
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--threads", type=int)
    return parser


def load_config(name: str, args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    for key in ("out", "seed", "paths", "threads"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    return ExperimentConfig.from_dict(data, name=name)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.experiment, args)
    except (OSError, ValueError, TypeError) as exc:
        parser.error(str(exc))
    report = run_experiment(args.experiment, cfg)
    for t in report.tables:
        print(f"# {t.caption}")
        print(",".join(t.columns))
        for r in t.rows:
            print(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r))
    for name, s in report.slopes.items():
        print(f"slope {name}: {s['value']:.4f}")
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value}")
    if cfg.out:
        emit_report(report, cfg.out)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
