"""Command line entry point.

    spacenet simulate --config scenarios/rfraud.yaml --out report.json
    spacenet bench pod --receivers 500
    spacenet bench pof --receivers 500 --packet-len 128
    spacenet validate-config scenarios/canonical.yaml

Exit codes: 0 ok, 1 invariant violation, 2 config error, 3 I/O error.
Set SPACENET_LOG (DEBUG, INFO, WARNING, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ConfigError, load_config, parse_config
from .consensus.da import DALoadError
from .consensus.election import ElectionError
from .sim.bench import append_benchmarks, bench_pod, bench_pof
from .sim.report import ReportIOError, emit_report
from .sim.runner import run_scenario

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _setup_logging() -> None:
    level = os.environ.get("SPACENET_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spacenet", description="Satellite service consensus simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write its report")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    sim.add_argument("--out", required=True)
    sim.add_argument("--format", choices=("json", "csv"), default="json")
    sim.add_argument("--da-log", default=None, help="also write the DA log (JSON lines) here")
    sim.add_argument("--bench", action="store_true", help="append a small PoD/PoF timing table to the report")

    bench = sub.add_parser("bench", help="time one PoD epoch or one PoF batch")
    which = bench.add_subparsers(dest="target", required=True)
    bpod = which.add_parser("pod")
    bpod.add_argument("--receivers", type=int, required=True)
    bpod.add_argument("--repeats", type=int, default=5)
    bpof = which.add_parser("pof")
    bpof.add_argument("--receivers", type=int, required=True)
    bpof.add_argument("--packet-len", type=int, required=True)
    bpof.add_argument("--repeats", type=int, default=5)

    val = sub.add_parser("validate-config", help="check a scenario file")
    val.add_argument("path")
    return p


def _simulate(args) -> int:
    try:
        cfg = load_config(args.config)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.epochs is not None:
            updates["epochs"] = args.epochs
        if updates:
            cfg = parse_config({**cfg.dump(), **updates})
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_scenario(cfg, args.da_log)
    except ElectionError as err:
        print(f"election halted: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, DALoadError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    if args.bench:
        append_benchmarks(result.report, pod=[500, 1000], pof=[(500, 128), (500, 256)])
    try:
        emit_report(result.report, args.format, args.out)
    except ReportIOError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    if not result.ok:
        for name, problems in result.violations.items():
            for msg in problems:
                print(f"invariant {name} violated: {msg}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _bench(args) -> int:
    if args.receivers < 2:
        print("bench needs --receivers >= 2", file=sys.stderr)
        return EXIT_CONFIG
    if args.target == "pod":
        secs = bench_pod(args.receivers, repeats=args.repeats)
        row = {"bench": "pod", "n": args.receivers, "seconds": secs}
    else:
        if args.packet_len < 1:
            print("bench pof needs --packet-len >= 1", file=sys.stderr)
            return EXIT_CONFIG
        secs = bench_pof(args.receivers, args.packet_len, repeats=args.repeats)
        row = {"bench": "pof", "n": args.receivers, "l": args.packet_len, "seconds": secs}
    print(json.dumps(row))
    return EXIT_OK


def _validate(args) -> int:
    try:
        cfg = load_config(args.path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.path}: ok ({cfg.name}, {cfg.n_receivers} receivers, {cfg.epochs} epochs)")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return _simulate(args)
    if args.command == "bench":
        return _bench(args)
    return _validate(args)


if __name__ == "__main__":
    sys.exit(main())
