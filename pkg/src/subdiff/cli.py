"""Command line runner.

    subdiff run CONFIG [--seed N] [--threads N] [--output-dir DIR]
    subdiff validate CONFIG

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The worker count defaults to ``$SUBDIFF_THREADS`` (or 1).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config as cfgmod
from .errors import ConfigError, NumericalError
from .experiments import default_threads, run_experiment, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="subdiff", description="Tagged-particle diffusion experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--threads", type=int, default=None, help="worker processes (default $SUBDIFF_THREADS or 1)")
    run.add_argument("--output-dir", default=None, help="override the config output_dir")
    val = sub.add_parser("validate", help="check a config file and print the effective config")
    val.add_argument("config")
    return p


def cmd_validate(path) -> int:
    try:
        cfg = cfgmod.load(path)
    except ConfigError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("OK")
    print(cfg.dumps(), end="")
    return EXIT_OK


def cmd_run(path, seed=None, threads=None, output_dir=None) -> int:
    try:
        cfg = cfgmod.load(path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed must be non-negative", key="seed")
            cfg = dataclasses.replace(cfg, seed=seed)
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=output_dir)
        threads = default_threads() if threads is None else threads
        if threads < 1:
            raise ConfigError("threads must be >= 1", key="threads")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run_experiment(cfg, threads)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    files = write_outputs(cfg, res)
    print(f"{cfg.experiment}: wrote {', '.join(files)} to {cfg.output_dir} ({res.wall_time:.1f} s)")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return cmd_validate(args.config)
    return cmd_run(args.config, args.seed, args.threads, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
