"""Command-line front end.

Subcommands map one-to-one onto the service layer:

* ``invariants`` — chi, kappa, and structure constants of a structure at points
* ``kernel``     — flat-kernel value, optionally with the homogeneity self-check
* ``duhamel``    — Monte Carlo K1 for a quadratic model, with predictions
* ``simulate``   — diffusion + KDE diagonal density over a t-grid
* ``fit``        — small-time expansion coefficients from simulated or exact data

Exit codes: 0 success, 2 usage error (bad flags, malformed structures or
expressions, nonpositive time, empty grids), 3 numerical-tolerance failure
(quadrature refused to meet its target, a Monte Carlo stratum starved, or the
homogeneity self-check missed).  ``--csv`` switches every command to a
machine-readable table formatted with round-trip ``repr`` floats, byte-stable
for fixed seed and flags.  ``--threads`` defaults to ``SRHEAT_THREADS`` or,
failing that, all cores; the library itself stays single-threaded unless
asked.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Sequence

from . import service
from .heisenberg import ToleranceNotMetError
from .perturbation import NonFiniteIntegrandError, StratumStarvationError
from .structures import StructureError, resolve_structure

__all__ = ["main", "build_parser"]

#: The homogeneity self-check must match to this tolerance or the command
#: exits with status 3.
HOMOGENEITY_TOL = 1e-10

_USAGE, _NUMERICAL = 2, 3


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit_rows(rows: Sequence[dict], columns: Sequence[str], csv_mode: bool) -> None:
    if csv_mode:
        sys.stdout.write(",".join(columns) + "\n")
        for row in rows:
            sys.stdout.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    else:
        for row in rows:
            sys.stdout.write(
                "  ".join(f"{c}={_fmt(row[c])}" for c in columns) + "\n")


def _parse_point(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected a point as x,y,w — got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad coordinate in {text!r}: {exc}")


def _parse_grid(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("t-grid must contain at least one value")
    try:
        grid = [float(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad t-grid entry: {exc}")
    if any(t <= 0 for t in grid):
        raise argparse.ArgumentTypeError("t-grid values must be positive")
    return grid


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SRHEAT_THREADS")
    if env is not None:
        try:
            n = int(env)
            if n < 1:
                raise ValueError
        except ValueError:
            raise StructureError(
                f"SRHEAT_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srheat",
        description="Local invariants, flat heat kernel, and small-time "
                    "diagonal expansions of 3D contact structures.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--csv", action="store_true",
                       help="machine-readable CSV on stdout")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: SRHEAT_THREADS or all cores)")

    p = sub.add_parser("invariants", help="chi, kappa, structure constants")
    p.add_argument("structure", help="heisenberg | model:a,b,c | "
                                     "rotated-heisenberg:EXPR | file.json")
    p.add_argument("--point", "-p", type=_parse_point, action="append",
                   help="evaluation point x,y,w (repeatable; default origin)")
    add_common(p)
    p.set_defaults(func=cmd_invariants)

    p = sub.add_parser("kernel", help="flat heat-kernel value")
    p.add_argument("--t", type=float, required=True, help="time, must be positive")
    p.add_argument("--q", type=_parse_point, default=(0.0, 0.0, 0.0),
                   help="evaluation point x,y,w (default origin)")
    p.add_argument("--abs-tol", type=float, default=1e-12)
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--check-homogeneity", action="store_true",
                   help="recompute through the parabolic dilation and compare")
    add_common(p)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("duhamel", help="Monte Carlo K1 for a quadratic model")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--strata", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    add_common(p)
    p.set_defaults(func=cmd_duhamel)

    p = sub.add_parser("simulate", help="diffusion + KDE diagonal density")
    p.add_argument("structure")
    p.add_argument("--t-grid", type=_parse_grid, required=True,
                   help="comma-separated positive times")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=_parse_point, default=(0.0, 0.0, 0.0))
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the small-time expansion coefficients")
    p.add_argument("structure", nargs="?",
                   help="structure to simulate (omit with --analytic)")
    p.add_argument("--t-grid", type=_parse_grid, required=True)
    p.add_argument("--analytic", choices=["su2"],
                   help="fit an exact closed form instead of simulating")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=_parse_point, default=(0.0, 0.0, 0.0))
    add_common(p)
    p.set_defaults(func=cmd_fit)

    return parser


def cmd_invariants(args) -> int:
    _, F = resolve_structure(args.structure)
    points = args.point or [(0.0, 0.0, 0.0)]
    rows = service.invariants_report(F, points)
    _emit_rows(rows, ["x", "y", "w", "chi", "kappa",
                      "c01_1", "c01_2", "c02_1", "c02_2", "c12_1", "c12_2"],
               args.csv)
    return 0


def cmd_kernel(args) -> int:
    report = service.kernel_report(args.t, args.q, abs_tol=args.abs_tol,
                                   rel_tol=args.rel_tol,
                                   check_homogeneity=args.check_homogeneity)
    columns = ["t", "x", "y", "w", "value"]
    if args.check_homogeneity:
        columns.append("homogeneity_mismatch")
    _emit_rows([report], columns, args.csv)
    if args.check_homogeneity and report["homogeneity_mismatch"] > HOMOGENEITY_TOL:
        sys.stderr.write(
            f"homogeneity mismatch {report['homogeneity_mismatch']:.3e} "
            f"exceeds {HOMOGENEITY_TOL:.0e}\n")
        return _NUMERICAL
    return 0


def cmd_duhamel(args) -> int:
    report = service.duhamel_report(args.a, args.b, args.c,
                                    n_samples=args.samples, s_strata=args.strata,
                                    seed=args.seed, threads=_threads(args))
    _emit_rows([report],
               ["a", "b", "c", "k1", "std_error", "n_samples", "s_strata",
                "predicted_chi", "predicted_kappa", "z_vs_kappa", "z_vs_zero"],
               args.csv)
    return 0


_SIM_COLUMNS = ["t", "p_hat", "std_error", "scaled", "n_kept", "n_aborted",
                "h_xy", "h_w", "empty_window"]


def cmd_simulate(args) -> int:
    _, F = resolve_structure(args.structure)
    rows = service.simulate_report(F, args.t_grid, n_paths=args.paths,
                                   n_steps=args.steps, seed=args.seed,
                                   start=args.start, threads=_threads(args))
    _emit_rows(rows, _SIM_COLUMNS, args.csv)
    return 0


def cmd_fit(args) -> int:
    if args.analytic is not None:
        if args.structure is not None:
            raise StructureError("--analytic replaces the structure argument; "
                                 "give one or the other")
        points = service.su2_diagonal(args.t_grid)
        report = service.fit_report(points)
    else:
        if args.structure is None:
            raise StructureError("a structure (or --analytic) is required")
        _, F = resolve_structure(args.structure)
        rows = service.simulate_report(F, args.t_grid, n_paths=args.paths,
                                       n_steps=args.steps, seed=args.seed,
                                       start=args.start, threads=_threads(args))
        if not args.csv:
            _emit_rows(rows, _SIM_COLUMNS, False)
        report = service.fit_report([(r["t"], r["p_hat"]) for r in rows], rows)
    _emit_rows([report], ["a0", "a1", "n_points"], args.csv)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed diagnostics
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StructureError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return _USAGE
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return _USAGE
    except (ToleranceNotMetError, NonFiniteIntegrandError,
            StratumStarvationError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return _NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
