"""Command-line entry point: ``elastic-spde <subcommand> [--config F] [--seed S] [--out D] [--threads T]``."""

from __future__ import annotations

import argparse
import sys
import time
import warnings

from ..particles import NumericalAbort
from .config import COMMANDS, default_config, load_config, to_jsonable
from .experiments import COMMAND_FUNCS
from .report import EXIT_CONFIG, EXIT_NUMERICAL, write_outputs


def _version() -> str:
    from .. import __version__

    return __version__


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elastic-spde", description="Elastically killed correlated diffusions: verification suites.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=" ".join(COMMAND_FUNCS[name].__doc__.split()))
        sp.add_argument("--config", help="TOML file overriding the subcommand defaults")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--print-config", action="store_true", help="print the effective config as TOML and exit")
    return ap


def resolve_config(args):
    cfg = load_config(args.config, args.command) if args.config else default_config(args.command)
    exp = {}
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.out is not None:
        exp["out"] = args.out
    if args.threads is not None:
        exp["threads"] = args.threads
    return cfg.replace(experiment=exp) if exp else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.to_toml(), end="")
            return 0
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            report = COMMAND_FUNCS[args.command](cfg)
        runtime = time.perf_counter() - t0
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:  # ConfigError, and parameter checks raised by the solvers
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = write_outputs(report, cfg.experiment.out, to_jsonable(cfg), _version(), cfg.experiment.seed, runtime)
    print(report.text())
    print(f"outputs: {manifest.parent}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
