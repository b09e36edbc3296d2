"""
Command line entry point.

    abcd-ocp <subcommand> [--config FILE] [--out DIR] [--tol TOL] [--max-iter N]

Subcommands: ``solve``, ``rate-study``, ``mesh-study``, ``tau-study``,
``error-study``, ``oracle-check``.  Without ``--config`` the standard problem
is used.  Exit codes: 0 success, 2 validation error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..abcd_solver import ReferenceSolveError
from ..grid_fem import MeshError
from ..sparse_core import LinearSolveError
from .config import STANDARD_CONFIG, ConfigError, parse_config
from .expressions import ExpressionError
from . import studies

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3

SUBCOMMANDS = ("solve", "rate-study", "mesh-study", "tau-study", "error-study", "oracle-check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abcd-ocp",
        description="Accelerated block coordinate descent for sparse elliptic optimal control.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run {name.replace('-', ' ')}")
        p.add_argument("--config", type=Path, help="INI file with [problem], [solver], [study]")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--tol", type=float, help="override [solver] kkt_tol")
        p.add_argument("--max-iter", type=int, help="override [solver] max_iter")
    return parser


def _summary_line(summary: dict) -> str:
    return json.dumps(summary, default=str, sort_keys=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; keep 0 for --help
        return int(exc.code or 0)

    try:
        source = args.config if args.config is not None else STANDARD_CONFIG
        cfg = parse_config(source, out_dir=args.out)
        if args.tol is not None and not args.tol > 0:
            raise ConfigError("--tol: must be positive")
        if args.max_iter is not None and args.max_iter < 1:
            raise ConfigError("--max-iter: must be at least 1")
        cfg = cfg.with_overrides(kkt_tol=args.tol, max_iter=args.max_iter)
        out = Path(args.out)

        if args.command == "solve":
            report, _, path = studies.run_solve(cfg)
            print(f"n_side={cfg.n_side} iterations={report.iterations} "
                  f"converged={str(report.converged).lower()} report={path}")
            return EXIT_OK if report.converged else EXIT_NONCONVERGED

        if args.command == "rate-study":
            result = studies.rate_study(cfg)
            path = result.write_csv(out / f"rate_study_n{cfg.n_side}.csv")
        elif args.command == "mesh-study":
            result, timing = studies.mesh_independence_study(cfg)
            path = result.write_csv(out / "mesh_study.csv")
            timing.write_csv(out / "mesh_study_timing.csv")
        elif args.command == "tau-study":
            result = studies.tau_study(cfg)
            path = result.write_csv(out / "tau_study.csv")
        elif args.command == "error-study":
            result = studies.discretization_error_study(cfg)
            path = result.write_csv(out / "error_study.csv")
        else:
            result = studies.oracle_check(cfg)
            path = result.write_csv(out / f"oracle_check_n{cfg.n_side}.csv")
        print(f"{result.name}: {path}")
        print(_summary_line(result.summary))
        return EXIT_OK
    except (ConfigError, ExpressionError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (studies.NonConvergenceError, ReferenceSolveError, LinearSolveError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
