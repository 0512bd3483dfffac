"""Command-line front end: ``qstat-inverse {likelihood,sample,reconstruct,verify}``.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
Failures print a one-line JSON record to stderr.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .core import DomainError
from .experiment import RunConfig, load_config, run_likelihood, run_reconstruct, run_sample

__all__ = ["build_parser", "cli_run", "main"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--seed", type=int, help="sampling seed (overrides [sampling] seed)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for per-datum work (default: all cores)")
    common.add_argument("--backend", choices=("classical", "semiclassical", "exact"),
                        help="likelihood backend for reconstruct")
    common.add_argument("--no-figures", action="store_true", help="skip PNG output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="qstat-inverse",
        description="Bayesian reconstruction of 1-D potentials from thermal position data.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("likelihood", parents=[common],
                   help="classical/semiclassical/exact densities and paths for the truth")
    sub.add_parser("sample", parents=[common], help="draw a dataset from the truth")
    sub.add_parser("reconstruct", parents=[common], help="MAP reconstruction from sampled data")
    sub.add_parser("verify", parents=[common], help="run the oracle suite")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.backend is not None:
        updates["backend"] = args.backend
        updates["deriv_backend"] = None
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise DomainError("--threads must be at least 1")
    updates["threads"] = threads
    return replace(cfg, **updates)


def _error(kind: str, exc: BaseException, command: str) -> None:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "command": command}
    print(json.dumps(rec), file=sys.stderr)


def cli_run(command: str, args) -> int:
    """Run one subcommand with parsed arguments; returns the exit code."""
    try:
        if command == "verify":
            from .verify import format_table, run_checks
            results = run_checks()
            print(format_table(results))
            return 0 if all(r.passed for r in results) else 1
        cfg = _resolve(args)
        figures = not args.no_figures
        if command == "likelihood":
            man = run_likelihood(cfg, args.out, figures=figures)
        elif command == "sample":
            _, man = run_sample(cfg, args.out)
        elif command == "reconstruct":
            _, _, man = run_reconstruct(cfg, args.out, figures=figures)
        else:
            raise DomainError(f"unknown command {command!r}")
        print(json.dumps({"command": command, "files": man.files, "figures": man.figures,
                          "convergence": man.convergence}, default=str))
        return 0
    except (DomainError, FileNotFoundError, configparser.Error) as exc:
        _error("usage", exc, command)
        return 2
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _error("numerical", exc, command)
        return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cli_run(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
