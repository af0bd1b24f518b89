"""Command-line interface: ``solve``, ``study`` and ``check``.

Exit codes: 0 success, 2 solver non-convergence or failed checks, 3 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from .grid import EmptyGridError, build_grid
from .norms import error_norms
from .problems import CATALOG, get_problem
from .study import SCHEMES, StudyConfig, convergence_study, emit_csv, solve_level

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_BAD_CONFIG = 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_CONFIG)


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _levels(text: str) -> list[float]:
    return [_number(t) for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--scheme", choices=SCHEMES, default="ws")
    p.add_argument("--example", choices=sorted(CATALOG), default="quad")
    p.add_argument("--stencil-width", type=int, default=1)
    p.add_argument("--alpha", type=_number, default=1.0)
    p.add_argument("--delta-reg", type=_number, default=0.0)
    p.add_argument("--delta-rule", default="h^(2/3)")
    p.add_argument("--theta-rule", default="h^(1/3)")
    p.add_argument("--solver", choices=("gs", "newton"), default=None)
    p.add_argument("--enforce-convexity", action="store_true")
    p.add_argument("--tol", type=_number, default=None)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--domain", choices=("default", "disk"), default="default",
                   help="solve on the unit disk instead of the example's own domain")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mongeampere", description="Monotone and geometric Monge-Ampère solvers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    solve = sub.add_parser("solve", help="solve one example on one grid or on several levels")
    _common(solve)
    g = solve.add_mutually_exclusive_group(required=True)
    g.add_argument("--h", type=_number)
    g.add_argument("--levels", type=_levels)
    study = sub.add_parser("study", help="multi-level convergence study")
    _common(study)
    study.add_argument("--levels", type=_levels, required=True)
    check = sub.add_parser("check", help="run randomized property suites")
    check.add_argument("--module", default="all",
                       choices=("all", "domain_grid", "directions", "operators", "geometry", "solvers", "harness"))
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--quick", action="store_true")
    return parser


def _config(args) -> StudyConfig:
    try:
        return StudyConfig(scheme=args.scheme, width=args.stencil_width, alpha=args.alpha, delta_reg=args.delta_reg,
                           delta_rule=args.delta_rule, theta_rule=args.theta_rule, solver=args.solver,
                           enforce_convexity=args.enforce_convexity, tol=args.tol, max_iters=args.max_iters,
                           seed=args.seed)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(str(exc)) from exc


def _problem(args):
    prob = get_problem(args.example)
    if args.domain == "disk":
        from .domain import disk

        prob = prob.on(disk())
    return prob


def _study(args) -> int:
    cfg = _config(args)
    prob = _problem(args)
    if len(args.levels) < 3:
        raise ConfigError("a study needs at least three levels")

    def show(row):
        if args.verbose:
            print(f"Dim={row.dim} h={row.h:g} Linf={row.linf:.3e} W21={row.w21:.3e} converged={row.converged}",
                  file=sys.stderr)

    rep = convergence_study(prob, cfg, args.levels, verbose=max(args.verbose - 1, 0), on_level=show)
    if args.out:
        emit_csv(rep, args.out)
    print(json.dumps({"problem": rep.problem, "fits": rep.fits, "converged": rep.converged}, sort_keys=True))
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _solve(args) -> int:
    if args.levels is not None:
        return _study(args)
    cfg = _config(args)
    prob = _problem(args)
    grid = build_grid(prob.domain, args.h)
    u, rep = solve_level(prob, grid, cfg, verbose=args.verbose)
    out = rep.to_dict()
    out["grid"] = grid.summary()
    if prob.exact_u is not None:
        out["errors"] = error_norms(u, prob, grid)._asdict()
    if args.out:
        np.savetxt(args.out, np.column_stack([grid.points, u.values]), delimiter=",", header="x,y,u", comments="")
    print(json.dumps(out, sort_keys=True, default=float))
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _check(args) -> int:
    from .checks import run_checks

    failures = run_checks(args.module, seed=args.seed, quick=args.quick, stream=sys.stdout)
    return EXIT_OK if not failures else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "solve":
            return _solve(args)
        if args.command == "study":
            return _study(args)
        return _check(args)
    except (ConfigError, EmptyGridError, ValueError) as exc:
        print(f"mongeampere: configuration error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
