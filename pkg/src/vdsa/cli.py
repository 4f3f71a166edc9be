"""Command line entry point: ``vdsa train|evaluate|report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from vdsa.experiment import PAPER_RUNS, ExperimentSpec, load_summary, run_experiment, train_tables
from vdsa.engine import Simulation
from vdsa.scenario import ConfigError

LOG = logging.getLogger("vdsa")


def _common(p: argparse.ArgumentParser, need_spec: bool = True) -> None:
    if need_spec:
        p.add_argument("--spec", required=True, type=Path, help="experiment spec (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override the spec file's master seed")
        p.add_argument("--workers", type=int, default=1, help="processes for independent runs")
        p.add_argument("--paper-scale", action="store_true", help=f"use {PAPER_RUNS} evaluation runs")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdsa", description="Platoon band-selection simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="offline training of every learning variant's table"))
    _common(sub.add_parser("evaluate", help="train if needed, evaluate all variants, write results"))
    _common(sub.add_parser("report", help="print the summary of an evaluated output directory"), need_spec=False)
    return parser


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.paper_scale:
        spec = spec.with_runs(PAPER_RUNS)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return spec


def cmd_train(args) -> int:
    spec = _load_spec(args)
    sim = Simulation(spec.simulation_config())
    tables = train_tables(spec, sim, args.workers, args.out / "cache")
    (args.out / "tables").mkdir(parents=True, exist_ok=True)
    for name, (table, used) in tables.items():
        table.save(args.out / "tables" / f"{name}_trained.qtbl")
        table.to_csv(args.out / "tables" / f"{name}_trained.csv")
        print(f"{name}: {used} training samples")
    return 0


def cmd_evaluate(args) -> int:
    spec = _load_spec(args)
    result = run_experiment(spec, args.out, args.workers)
    for name, vr in result.variants.items():
        print(f"{name}: {vr.metrics.runs} runs evaluated")
    _print_summary(load_summary(args.out))
    return 0


def _print_summary(summary: dict) -> None:
    print(f"{'variant':<24} {'last pos':>8} {'rate':>7} {'se':>7} {'switches':>9} {'dtt viol':>9}")
    for name, s in summary.items():
        print(
            f"{name:<24} {s['last_position']!s:>8} {s['last_position_mean']:7.4f} {s['last_position_se']:7.4f}"
            f" {s['switches_per_platoon']:9.2f} {s['dtt_violation_fraction']:9.4f}"
        )


def cmd_report(args) -> int:
    _print_summary(load_summary(args.out))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
