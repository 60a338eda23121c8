"""Command-line frontend: ``maflow solve | check | envelope | regularize | study``.

Exit codes: 0 success, 1 config or I/O error, 2 solver divergence, 3 check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from .errors import DegenerateG, InnerDivergence, MAFlowError, MaxIterExceeded
from .fieldio import fmt, load_config, read_field, write_field

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED = 0, 1, 2, 3


def _num(x, csv_mode=False):
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        return str(x) if csv_mode else json.dumps(str(x))
    return fmt(x)


def report_json(rep) -> str:
    d = rep.to_json()
    body = ", ".join(f'"{k}": {json.dumps(v) if isinstance(v, str) else _num(v)}'
                     for k, v in d.items() if k != "notes")
    return "{" + body + "}"


def _write_csv(rows, fieldnames, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(fieldnames)
    for r in rows:
        w.writerow([_num(r[k], True) if not isinstance(r[k], str) else r[k] for k in fieldnames])


# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    from .solver import solve_flow

    cfg = load_config(args.config)
    if args.method:
        cfg.params.method = args.method
    rows = []
    phi = solve_flow(cfg.problem, cfg.grid, cfg.params, log_rows=rows)
    write_field(args.out, phi)
    log_path = args.log or f"{args.out}.log.csv"
    with open(log_path, "w") as fh:
        _write_csv([vars(r) for r in rows], ["step", "iterations", "residual"], fh)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checkers import (
        LegendreParams,
        check_pluripotential_subsolution,
        check_pluripotential_supersolution,
        check_viscosity_subsolution,
        check_viscosity_supersolution,
    )
    from .fields import is_parabolic_potential
    from .harness import slack

    cfg = load_config(args.config)
    u = read_field(args.field, cfg.grid)
    tol = slack(cfg.grid) if args.tol is None else args.tol
    p = cfg.problem
    frames = cfg.params.frames
    if args.kind == "psub":
        rep = check_pluripotential_subsolution(u, p, LegendreParams(args.a_mode), tol=tol, frames=frames)
    elif args.kind == "psuper":
        rep = check_pluripotential_supersolution(u, p, tol=tol, frames=frames)
    elif args.kind == "vsub":
        rep = check_viscosity_subsolution(u, p, tol=tol, frames=frames)
    elif args.kind == "vsuper":
        rep = check_viscosity_supersolution(u, p, tol=tol, frames=frames)
    else:
        rep = is_parabolic_potential(u, tol, frames)
    print(report_json(rep))
    return EXIT_OK if rep.verdict else EXIT_FAILED


def cmd_envelope(args) -> int:
    from .envelope import perron_envelope, psh_envelope_field

    if args.kind == "psh":
        if not args.obstacle:
            raise MAFlowError("envelope psh needs --obstacle")
        out = psh_envelope_field(read_field(args.obstacle), tol=args.tol, max_iter=args.max_iter)
    else:
        if not args.inputs:
            raise MAFlowError("envelope perron needs --inputs")
        fields = [read_field(args.inputs[0])]
        fields += [read_field(p, fields[0].grid) for p in args.inputs[1:]]
        out = perron_envelope(fields)
    write_field(args.out, out)
    return EXIT_OK


def cmd_regularize(args) -> int:
    from .regularize import inf_convolution_time, sup_convolution_time, time_mollify

    u = read_field(args.input)
    if args.kind == "sup":
        out = sup_convolution_time(u, args.eps)
    elif args.kind == "inf":
        out = inf_convolution_time(u, args.eps)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            out = time_mollify(u, args.eps)
    write_field(args.out, out)
    return EXIT_OK


def cmd_study(args) -> int:
    from .harness import convergence_study
    from .solver import SolverParams

    rows = convergence_study(args.case, args.levels, SolverParams(method=args.method or "fixed-point"))
    _write_csv(rows, ["level", "h", "dt", "steps", "error", "budget", "order", "fitted_order"], sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maflow", description="Parabolic complex Monge-Ampere flows on grids.")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="march the flow and write the solution field")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="convergence-log CSV (default: OUT.log.csv)")
    p.add_argument("--method", choices=["fixed-point", "newton"])
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="sub/supersolution and potential checks")
    p.add_argument("kind", choices=["psub", "vsub", "vsuper", "psuper", "potential"])
    p.add_argument("--field", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--tol", type=float, default=None, help="default C*(h^2 + dt)")
    p.add_argument("--a-mode", choices=["analytic", "sampled"], default="analytic")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("envelope", help="psh envelope of an obstacle or Perron envelope of a family")
    p.add_argument("kind", choices=["psh", "perron"])
    p.add_argument("--obstacle")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200_000)
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("regularize", help="sup/inf-convolution or mollification in time")
    p.add_argument("kind", choices=["sup", "inf", "mollify"])
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regularize)

    p = sub.add_parser("study", help="convergence table for a registered exact case (CSV on stdout)")
    p.add_argument("--case", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--method", choices=["fixed-point", "newton"])
    p.set_defaults(func=cmd_study)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (InnerDivergence, MaxIterExceeded) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DegenerateG as exc:
        print(f"error: DegenerateG: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MAFlowError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
