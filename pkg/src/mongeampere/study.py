"""Single solves and multi-level convergence studies."""

from __future__ import annotations

import ast
import json
import math
import operator
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import convexify
from .grid import Grid, NodalField, build_grid, p1_interpolate
from .norms import error_norms
from .operators import SchemeConfig, ce_scheme, make_scheme
from .problems import Problem
from .solvers import (
    SolveReport,
    gauss_seidel_monotone,
    initialize,
    op_solve,
    semismooth_newton,
)

SCHEMES = ("ws", "ws-variant", "ws-reg", "fd9", "filtered", "lbr", "pd", "two-scale", "op", "ce")
CSV_HEADER = "Dim,Linferr,H1err,W21err,H2err"
NORM_KEYS = ("Linferr", "H1err", "W21err", "H2err")
EXACT_TOL = 1e-11


# -- parameter rules ------------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_rule(expr: str):
    """Arithmetic expression in ``h`` (``^`` is a power), e.g. "2*h^(2/3)"."""
    tree = ast.parse(expr.replace("^", "**"), mode="eval")

    def ev(node, h):
        if isinstance(node, ast.Expression):
            return ev(node.body, h)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "h":
            return h
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left, h), ev(node.right, h))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand, h))
        raise ValueError(f"unsupported expression {expr!r}")

    ev(tree, 0.5)
    return lambda h: float(ev(tree, float(h)))


@dataclass
class StudyConfig:
    scheme: str = "ws"
    width: int = 1
    alpha: float = 1.0
    delta_reg: float = 0.0
    delta_rule: str = "h^(2/3)"
    theta_rule: str = "h^(1/3)"
    solver: str | None = None
    enforce_convexity: bool = False
    tol: float | None = None
    max_iters: int = 200
    op_method: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.solver not in (None, "gs", "newton"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.width < 1:
            raise ValueError("stencil width must be at least 1")
        self._delta = parse_rule(self.delta_rule)
        self._theta = parse_rule(self.theta_rule)

    def scheme_config(self, h: float) -> SchemeConfig:
        theta = min(self._theta(h), math.pi / 4)
        return SchemeConfig(h, delta=max(self._delta(h), h), theta=theta, alpha=self.alpha,
                            delta_reg=self.delta_reg, width=self.width)

    def default_solver(self) -> str:
        if self.solver is not None:
            return self.solver
        return "gs" if self.scheme in ("lbr", "pd", "ce") else "newton"

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}


@dataclass
class LevelResult:
    dim: int
    h: float
    linf: float
    h1: float
    w21: float
    h2: float
    iterations: int
    seconds: float
    residual: float
    converged: bool
    excluded: int = 0

    def errors(self) -> dict:
        return {"Linferr": self.linf, "H1err": self.h1, "W21err": self.w21, "H2err": self.h2}


@dataclass
class ConvergenceReport:
    problem: str
    config: dict
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def fit(self):
        self.fits = fit_orders(self.rows)
        return self.fits


def fit_orders(rows) -> dict:
    """Least-squares slopes of log error against log Dim and log h, converged rows only."""
    ok = [r for r in rows if r.converged]
    out = {}
    for key in NORM_KEYS:
        errs = np.array([r.errors()[key] for r in ok])
        if len(ok) < 2:
            out[key] = None
        elif np.all(errs <= EXACT_TOL):
            out[key] = "exact"
        else:
            e = np.maximum(errs, 1e-300)
            out[key] = {
                "dim": float(np.polyfit(np.log([r.dim for r in ok]), np.log(e), 1)[0]),
                "h": float(np.polyfit(np.log([r.h for r in ok]), np.log(e), 1)[0]),
            }
    return out


# -- solving one level ----------------------------------------------------------


def warm_start(coarse: NodalField, grid: Grid, problem: Problem, convex: bool) -> NodalField:
    vals = np.empty(grid.n_nodes)
    vals[: grid.n_interior] = p1_interpolate(coarse, grid.interior_points)
    vals[grid.n_interior:] = problem.g(grid.boundary_points)
    u = NodalField(grid, vals)
    return convexify(u) if convex else u


def solve_level(problem: Problem, grid: Grid, cfg: StudyConfig, init: NodalField | None = None, verbose: int = 0):
    """Solve one discretization; returns (field, SolveReport)."""
    sc = cfg.scheme_config(grid.h)
    if cfg.scheme == "op":
        u, rep = op_solve(problem.masses(grid), problem.g, grid, tol=cfg.tol, max_sweeps=cfg.max_iters,
                          method=cfg.op_method, init=init, width=max(cfg.width, 2), verbose=verbose)
        rep.config = {**rep.config, **sc.to_dict()}
        return u, rep
    if cfg.scheme == "ce":
        target = problem.exact_u(grid.points)
        scheme = ce_scheme(grid, target, sc, g=problem.g)
        if init is None:
            init = NodalField(grid, target)
    else:
        if problem.f is None:
            raise ValueError(f"scheme {cfg.scheme!r} needs a density; {problem.label!r} has point masses")
        scheme = make_scheme(cfg.scheme, grid, problem.g, sc, f_values=problem.f_values(grid))
        if init is None:
            init = initialize(problem, grid)
    if cfg.default_solver() == "gs":
        return gauss_seidel_monotone(scheme, init, tol=cfg.tol, max_sweeps=cfg.max_iters * 50, verbose=verbose)
    newton = dict(tol=cfg.tol, enforce_convexity=cfg.enforce_convexity, verbose=verbose)
    if cfg.scheme == "filtered":
        # the filter is non-monotone; start from the monotone wide-stencil solution
        u, rep = semismooth_newton(scheme, init, max_iters=min(20, cfg.max_iters), **newton)
        if rep.converged:
            return u, rep
        ws = make_scheme("ws", grid, problem.g, sc, f_values=scheme.rhs)
        init, pre = semismooth_newton(ws, init, max_iters=cfg.max_iters, **newton)
        u, rep = semismooth_newton(scheme, init, max_iters=cfg.max_iters, **newton)
        rep.iterations += pre.iterations
        return u, rep
    return semismooth_newton(scheme, init, max_iters=cfg.max_iters, **newton)


def convergence_study(problem: Problem, cfg: StudyConfig, levels, warm: bool = True, verbose: int = 0,
                      on_level=None) -> ConvergenceReport:
    levels = sorted((float(h) for h in levels), reverse=True)
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least three levels")
    report = ConvergenceReport(problem.label, cfg.to_dict())
    prev = None
    for h in levels:
        grid = build_grid(problem.domain, h)
        init = None
        if warm and prev is not None and cfg.scheme not in ("ce",):
            init = warm_start(prev, grid, problem, convex=cfg.enforce_convexity or cfg.scheme == "op")
        t0 = time.perf_counter()
        try:
            u, rep = solve_level(problem, grid, cfg, init=init, verbose=verbose)
        except RuntimeError as exc:  # solver breakdown counts as a failed level
            u, rep = None, SolveReport(0, math.inf, 0.0, cfg.scheme, {}, False, message=str(exc))
        secs = time.perf_counter() - t0
        if u is not None:
            nrm = error_norms(u, problem, grid)
            row = LevelResult(grid.n_interior, h, nrm.linf, nrm.h1, nrm.w21, nrm.h2, rep.iterations, secs,
                              rep.residual, rep.converged, nrm.excluded)
        else:
            nan = math.nan
            row = LevelResult(grid.n_interior, h, nan, nan, nan, nan, 0, secs, math.inf, False)
        report.rows.append(row)
        if on_level is not None:
            on_level(row)
        prev = u if (u is not None and rep.converged) else None
    report.fit()
    return report


# -- output ---------------------------------------------------------------------


def emit_csv(report: ConvergenceReport, path) -> Path:
    """Write the error table and a sibling ``.rates.json`` with fitted orders."""
    path = Path(path)
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(",".join([str(r.dim)] + [repr(float(r.errors()[k])) for k in NORM_KEYS]))
    path.write_text("\n".join(lines) + "\n")
    rates = {
        "problem": report.problem,
        "config": report.config,
        "fits": report.fits,
        "levels": [{"h": r.h, "dim": r.dim, "iterations": r.iterations, "converged": r.converged,
                    "excluded": r.excluded} for r in report.rows],
    }
    rates_path = path.with_name(path.stem + ".rates.json")
    rates_path.write_text(json.dumps(rates, indent=2, sort_keys=True) + "\n")
    return path
