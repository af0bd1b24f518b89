"""Nonlinear solvers for the discrete Monge-Ampère systems.

* :func:`gauss_seidel_monotone`: per-node bracketing and bisection, valid for
  every operator that is nonincreasing in the center value.
* :func:`semismooth_newton`: damped Newton on the active-basis linearization.
* :func:`op_solve`: the subdifferential-area system, by Newton on local
  neighbour polygons, by descending coordinate iteration, or by a block method
  for densities that vanish on most nodes.
"""

from __future__ import annotations

import contextlib
import ctypes
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from .geometry import convexify, is_nodally_convex, lower_convex_hull, op_residual, subdifferential_areas
from .grid import Grid, NodalField
from .operators import Scheme, _values, op_local_scheme

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonBracketableNode(SolverError):
    def __init__(self, node: int, point):
        super().__init__(f"non-bracketable node {node} at {tuple(np.round(point, 12))}")
        self.node = node


@dataclass
class SolveReport:
    iterations: int
    residual: float
    seconds: float
    scheme: str
    config: dict
    converged: bool
    stalled: bool = False
    history: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "seconds": self.seconds,
            "scheme": self.scheme,
            "config": self.config,
            "converged": self.converged,
            "stalled": self.stalled,
            "message": self.message,
        }


def _progress(verbose: int, label: str, it: int, res: float, damping: float | None = None):
    if verbose >= 1:
        extra = "" if damping is None else f" damping={damping:.3g}"
        print(f"[{label}] iter={it} residual={res:.6e}{extra}", file=sys.stderr)


def default_tol(f_max: float, h: float | None = None, mass_scale: bool = False) -> float:
    """1e-10·(1 + max f), times h² for mass-scaled residuals."""
    tol = 1e-10 * (1.0 + float(f_max))
    return tol * h**2 if mass_scale else tol


# -- initialization ------------------------------------------------------------


def boundary_blend(grid: Grid, g) -> np.ndarray:
    """Average of the linear interpolants of g along the horizontal and vertical chords."""
    X = grid.interior_points
    dom = grid.domain
    acc = np.zeros(len(X))
    for d in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        t0, t1 = dom.chord(X, d)
        a = X + t0[:, None] * d
        b = X + t1[:, None] * d
        ga, gb = g(a), g(b)
        lam = -t0 / (t1 - t0)
        acc += (1 - lam) * ga + lam * gb
    return 0.5 * acc


def initialize(problem, grid: Grid, convex: bool = True) -> NodalField:
    """Boundary blend plus K(|x − c|² − R²), K = (max f)^{1/2}/2, then convexified."""
    dom = grid.domain
    vals = np.empty(grid.n_nodes)
    vals[grid.n_interior:] = problem.g(grid.boundary_points)
    fmax = problem.f_max(grid)
    K = 0.5 * math.sqrt(max(fmax, 0.0))
    c = dom.centroid
    R = dom.circumradius
    X = grid.interior_points
    vals[: grid.n_interior] = boundary_blend(grid, problem.g) + K * (np.sum((X - c) ** 2, axis=1) - R * R)
    u = NodalField(grid, vals)
    return convexify(u) if convex else u


def directional_envelope(scheme: Scheme, u, max_iters: int = 100) -> np.ndarray:
    """Largest nodal function below ``u`` whose stencil second differences are nonnegative.

    Boundary values are kept. Solved by policy iteration on
    min(u − v, h²·min_k D_k v) = 0: each row either pins v to u or zeroes its
    smallest second difference.
    """
    grid = scheme.grid
    m = scheme.convexity_slots
    v = np.array(_values(u), dtype=float)
    if m == 0:
        return convexify(NodalField(grid, v)).values.copy()
    p = scheme.program
    rows = p.rows
    ni = grid.n_interior
    cc, idx, cf, cst = p.cc[:, :m], p.idx[:, :m], p.cf[:, :m], p.cst[:, :m]
    obstacle = v[rows].copy()
    h2 = grid.h**2
    n = len(rows)
    local = np.full(ni, -1, dtype=np.int64)
    local[rows] = np.arange(n)
    policy = None
    for _ in range(max_iters):
        d = h2 * K.slot_values(v, rows, p.cc, p.idx, p.cf, p.cst)[:, :m]
        k = np.argmin(d, axis=1)
        gap = obstacle - v[rows]
        choice = np.where(gap <= d[np.arange(n), k] + 1e-14 * np.abs(obstacle).max(initial=1.0), -1, k)
        if policy is None and not (choice >= 0).any():
            break
        if policy is not None and np.array_equal(choice, policy):
            break
        policy = choice
        # pinned rows are known; solve only for the free ones
        free = np.flatnonzero(choice >= 0)
        v[rows] = obstacle
        if len(free) == 0:
            break
        pos = np.full(n, -1, dtype=np.int64)
        pos[free] = np.arange(len(free))
        kk = choice[free]
        cols = idx[free, kk]
        coef = cf[free, kk]
        slot = np.where((cols >= 0) & (cols < ni), local[np.clip(cols, 0, ni - 1)], -1)
        unknown = slot >= 0
        unknown[unknown] = pos[slot[unknown]] >= 0
        known = (cols >= 0) & ~unknown
        b = -cst[free, kk] - np.sum(np.where(known, coef * v[np.where(cols >= 0, cols, 0)], 0.0), axis=1)
        r = np.arange(len(free))
        rr = np.repeat(r[:, None], cols.shape[1], axis=1)[unknown]
        cj = pos[slot[unknown]]
        A = sp.csc_matrix((np.concatenate([cc[free, kk], coef[unknown]]), (np.concatenate([r, rr]), np.concatenate([r, cj]))),
                          shape=(len(free), len(free)))
        prev = v[rows[free]]
        v[rows[free]] = spla.spsolve(A, b)
        if np.abs(v[rows[free]] - prev).max() <= 1e-14 * max(1.0, float(np.abs(obstacle).max())):
            break
    return v


# -- Gauss-Seidel -------------------------------------------------------------


def _orders(grid: Grid, rows: np.ndarray, red_black: bool) -> list[np.ndarray]:
    idx = np.arange(len(rows))
    if not red_black:
        return [idx]
    if not grid.is_canonical:
        raise ValueError("red-black sweeps need the canonical lattice basis")
    parity = grid.lattice[rows].sum(axis=1) % 2
    return [idx[parity == 0], idx[parity == 1]]


def _resolved(scheme: Scheme, u, tol: float, F=None, J=None) -> bool:
    """Every row satisfies |F_r| <= tol, or is below its rounding floor."""
    if F is None:
        F = scheme.residual(u)
    F = np.abs(F)
    if F.max(initial=0.0) <= tol:
        return True
    if F.max() > 1e4 * tol:
        return False
    return bool(np.all(F <= np.maximum(tol, scheme.rounding_floor(u, J))))


def gauss_seidel_monotone(scheme: Scheme, init: NodalField, tol: float | None = None, max_sweeps: int = 1000,
                          red_black: bool = False, step0: float | None = None, verbose: int = 0,
                          callback=None):
    """Nonlinear Gauss-Seidel with per-node bracketing and bisection.

    Each node solves value(u_x) = rhs_x with the other values frozen; the
    local tolerance is tol/10. Raises :class:`NonBracketableNode` when no
    bracket is found within 60 doublings.
    """
    t_start = time.perf_counter()
    grid = scheme.grid
    if tol is None:
        tol = default_tol(np.max(scheme.rhs, initial=0.0))
    u = np.array(init.values, dtype=float)
    if step0 is None:
        step0 = grid.h**2
    orders = _orders(grid, scheme.rows, red_black)
    res = float(np.abs(scheme.residual(u)).max(initial=0.0))
    history = [res]
    sweeps = 0
    _progress(verbose, "gs", 0, res)
    met = _resolved(scheme, u, tol)
    while not met and sweeps < max_sweeps:
        for order in orders:
            _, failed = scheme.gs_sweep(u, order, tol / 10, step0)
            if failed >= 0:
                node = int(scheme.rows[failed])
                raise NonBracketableNode(node, grid.points[node])
        sweeps += 1
        res = float(np.abs(scheme.residual(u)).max(initial=0.0))
        history.append(res)
        met = _resolved(scheme, u, tol)
        _progress(verbose, "gs", sweeps, res)
        if callback is not None:
            callback(sweeps, u, res)
    out = NodalField(grid, u)
    rep = SolveReport(sweeps, res, time.perf_counter() - t_start, scheme.name,
                      scheme.config.to_dict() if scheme.config else {}, met, history=history)
    return out, rep


# -- semismooth Newton --------------------------------------------------------


AMG_MIN_UNKNOWNS = 5000


_LIBC = ctypes.CDLL(None)


@contextlib.contextmanager
def _silenced_stdout():
    """Discard output written to file descriptor 1 (pyamg's C++ setup diagnostics)."""
    sys.stdout.flush()
    _LIBC.fflush(None)
    saved = os.dup(1)
    try:
        with open(os.devnull, "w") as null:
            os.dup2(null.fileno(), 1)
        yield
    finally:
        _LIBC.fflush(None)
        os.dup2(saved, 1)
        os.close(saved)


def _amg_solve(J: sp.csr_matrix, b: np.ndarray) -> np.ndarray | None:
    """Classical AMG-preconditioned GMRES; None unless the true residual is small.

    A relative linear residual of 1e-8 keeps Newton quadratic: the step error
    is far below the next nonlinear residual.
    """
    import pyamg

    try:
        with warnings.catch_warnings(), _silenced_stdout():
            warnings.simplefilter("ignore")
            ml = pyamg.ruge_stuben_solver(J.tocsr())
            x = ml.solve(b, tol=1e-13, accel="gmres", maxiter=100)
    except (ValueError, RuntimeError, ZeroDivisionError, np.linalg.LinAlgError):
        return None
    bn = float(np.abs(b).max(initial=0.0))
    if not np.all(np.isfinite(x)) or float(np.abs(J @ x - b).max(initial=0.0)) > 1e-8 * bn:
        return None
    return x


def _solve_linear(J: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    n = J.shape[0]
    if n >= AMG_MIN_UNKNOWNS:
        # sparse LU fill-in on wide stencils is prohibitive at this size
        x = _amg_solve(J, b)
        if x is not None:
            return x
    J = J.tocsr()
    # SuperLU reports empty rows through BLAS on stdout; skip it for those
    if np.all(abs(J).max(axis=1).toarray().ravel() > 0):
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                x = spla.spsolve(J.tocsc(), b)
                if np.all(np.isfinite(x)):
                    return x
            except (spla.MatrixRankWarning, RuntimeError):
                pass
    lam = 1e-10 * float(J.diagonal().sum()) / max(n, 1)
    if lam == 0.0:
        lam = -1e-10
    warnings.warn(f"singular Jacobian, ridge-regularized by {lam:.3e}", RuntimeWarning, stacklevel=3)
    x = spla.spsolve((J + lam * sp.identity(n, format="csr")).tocsc(), b)
    return np.nan_to_num(x)


def semismooth_newton(scheme: Scheme, init: NodalField, tol: float | None = None, max_iters: int = 100,
                      damping: float = 1.0, enforce_convexity: bool = False, verbose: int = 0,
                      armijo: float = 1e-4, max_halvings: int = 30, stall_window: int = 25):
    """Damped Newton on value − rhs with Armijo backtracking in the max-norm.

    Schemes with a separate Newton matrix first try the exact Jacobian step.
    When the line search fails, one Gauss-Seidel sweep is taken instead.
    The run stops as stalled if the residual has not halved over the last
    ``stall_window`` iterations.
    With ``enforce_convexity`` every accepted iterate is lowered to its
    directional convex envelope on the scheme's own stencil.
    """
    t_start = time.perf_counter()
    grid = scheme.grid
    ni = grid.n_interior
    if tol is None:
        tol = default_tol(np.max(scheme.rhs, initial=0.0))
    u = np.array(init.values, dtype=float)
    if enforce_convexity:
        u = directional_envelope(scheme, u)
    two_matrices = scheme.newton_kind != scheme.kind
    vals, J = scheme.linearize(u, exact=False)
    F = vals - scheme.rhs
    res = float(np.abs(F).max(initial=0.0))
    history = [res]
    it = 0
    message = ""
    stalled = False
    _progress(verbose, "newton", 0, res)

    def search(du, halvings):
        t = damping
        for _ in range(halvings + 1):
            trial = u.copy()
            trial[:ni] += t * du
            r_trial = float(np.abs(scheme.residual(trial)).max(initial=0.0))
            if np.isfinite(r_trial) and r_trial <= (1 - armijo * t) * res:
                return trial, t
            t *= 0.5
        return None, 0.0

    met = _resolved(scheme, u, tol, F, J)
    while not met and it < max_iters:
        it += 1
        trial = None
        if two_matrices:
            # the exact Jacobian converges fast near the solution; the monotone
            # Newton matrix is the globalizing fallback
            _, J_exact = scheme.linearize(u, exact=True)
            du = _solve_linear(J_exact, -F)
            if np.all(np.isfinite(du)):
                trial, t = search(du, 0)
        if trial is None:
            trial, t = search(_solve_linear(J, -F), max_halvings)
        if trial is not None:
            u = trial
            if enforce_convexity:
                u = directional_envelope(scheme, u)
        elif not scheme.monotone:
            # a Gauss-Seidel sweep has no descent guarantee without monotonicity
            stalled = True
            message = f"line search failed at residual {res:.3e}"
            break
        else:
            message = "line search failed; Gauss-Seidel fallback"
            _, failed = scheme.gs_sweep(u, np.arange(len(scheme.rows)), tol / 10, grid.h**2)
            if failed >= 0:
                node = int(scheme.rows[failed])
                raise NonBracketableNode(node, grid.points[node])
            if enforce_convexity:
                u = directional_envelope(scheme, u)
            t = 0.0
        vals, J = scheme.linearize(u, exact=False)
        F = vals - scheme.rhs
        res = float(np.abs(F).max(initial=0.0))
        history.append(res)
        met = _resolved(scheme, u, tol, F, J)
        _progress(verbose, "newton", it, res, t)
        if stall_window and it >= stall_window and res > 0.5 * history[-1 - stall_window]:
            stalled = True
            message = f"stalled: residual {res:.3e} not halved in {stall_window} iterations"
            break
    out = NodalField(grid, u)
    rep = SolveReport(it, res, time.perf_counter() - t_start, scheme.name,
                      scheme.config.to_dict() if scheme.config else {}, met, stalled=stalled, history=history,
                      message=message)
    return out, rep


# -- Oliker-Prussner ---------------------------------------------------------


def boundary_envelope(grid: Grid, g) -> NodalField:
    """Convex envelope of the boundary data, evaluated at every node."""
    vals = np.empty(grid.n_nodes)
    vals[grid.n_interior:] = g(grid.boundary_points)
    vals[: grid.n_interior] = np.max(vals[grid.n_interior:]) + 1.0
    return convexify(NodalField(grid, vals))


def _subset_envelope(grid: Grid, values: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Envelope of the nodes in ``keep`` evaluated at every node."""
    vals = np.array(values, dtype=float)
    hi = vals[keep].max() + 1.0
    vals[~keep] = hi
    env = lower_convex_hull(NodalField(grid, vals))
    return np.where(keep, values, env.envelope)


def op_solve(masses, g, grid: Grid, tol: float | None = None, max_sweeps: int = 200, method: str = "auto",
             init: NodalField | None = None, width: int = 2, max_width: int = 6, verbose: int = 0):
    """Solve |∂Γ(u)(x)| = f_x at interior nodes with u = g on the boundary.

    ``method``: "newton" (local neighbour polygons with a hull check that
    widens the window until the local areas equal the true ones), "descent"
    (coordinate lowering from the boundary envelope), "block" (zero-mass nodes
    are slaved to the envelope of the others), or "auto".
    """
    t_start = time.perf_counter()
    masses = np.asarray(masses, dtype=float)
    if np.any(masses < 0):
        raise ValueError("cell masses must be nonnegative")
    fmax = float(masses.max(initial=0.0)) / grid.h**2
    if tol is None:
        tol = default_tol(fmax, grid.h, mass_scale=True)
    if method == "auto":
        method = "block" if np.count_nonzero(masses) < 0.05 * len(masses) else "newton"
    if method == "block":
        u, rep = _op_block(masses, g, grid, tol, max_sweeps, verbose)
    elif method in ("newton", "descent"):
        u, rep = _op_local(masses, g, grid, tol, max_sweeps, method, init, width, max_width, verbose)
    else:
        raise ValueError(f"unknown OP method {method!r}")
    rep.seconds = time.perf_counter() - t_start
    return u, rep


def _op_local(masses, g, grid, tol, max_sweeps, method, init, width, max_width, verbose):
    if init is None:
        init = boundary_envelope(grid, g) if method == "descent" else None
    if init is None:
        from types import SimpleNamespace

        fmax = float(masses.max(initial=0.0)) / grid.h**2
        prob = SimpleNamespace(g=g, f_max=lambda _g: fmax)
        init = initialize(prob, grid)
    u = init
    total = 0
    history = []
    stalled = False
    while True:
        scheme = op_local_scheme(grid, masses, width=width)
        if method == "newton":
            u, rep = semismooth_newton(scheme, u, tol=tol, max_iters=max_sweeps, verbose=verbose)
        else:
            u, rep = gauss_seidel_monotone(scheme, u, tol=tol, max_sweeps=max_sweeps, verbose=verbose,
                                           step0=grid.h)
            h = rep.history
            if len(h) > 10 and h[-1] > (1 - 1e-3) * h[-11] and not rep.converged:
                stalled = True
        total += rep.iterations
        history.extend(rep.history)
        hull_res = np.abs(op_residual(u, masses)).max(initial=0.0)
        convex = is_nodally_convex(u)
        log.debug("op width=%d local=%.3e hull=%.3e convex=%s", width, rep.residual, hull_res, convex)
        if (hull_res <= tol and convex) or width >= max_width or not rep.converged:
            break
        width += 1
    res = float(hull_res)
    msg = "" if convex else "iterate not nodally convex"
    return u, SolveReport(total, res, 0.0, f"op-{method}", {"h": grid.h, "width": width}, res <= tol and convex,
                          stalled=stalled, history=history, message=msg)


def _op_block(masses, g, grid, tol, max_sweeps, verbose):
    """Positive-mass nodes by bisection on exact hull areas; the rest on the envelope."""
    ni = grid.n_interior
    u = boundary_envelope(grid, g).values.copy()
    active = np.flatnonzero(masses > 0)
    keep = np.zeros(grid.n_nodes, dtype=bool)
    keep[ni:] = True
    keep[active] = True
    scale = float(np.ptp(u)) + grid.domain.diameter

    def area_at(i, t):
        v = u.copy()
        v[i] = t
        env = lower_convex_hull(NodalField(grid, np.where(keep, v, v.max() + 1.0)))
        return float(subdifferential_areas(env, np.array([i]))[0])

    history = []
    sweeps = 0
    res = np.inf
    while sweeps < max_sweeps:
        for i in active:
            hi = u[i]
            if area_at(i, hi) >= masses[i]:
                continue
            step = scale
            lo = hi - step
            while area_at(i, lo) < masses[i]:
                step *= 2
                lo = hi - step
                if step > 1e12 * scale:
                    raise NonBracketableNode(int(i), grid.points[i])
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if abs(area_at(i, mid) - masses[i]) <= tol / 10:
                    lo = hi = mid
                    break
                if area_at(i, mid) < masses[i]:
                    hi = mid
                else:
                    lo = mid
            u[i] = 0.5 * (lo + hi)
        u = _subset_envelope(grid, u, keep)
        sweeps += 1
        res = float(np.abs(op_residual(NodalField(grid, u), masses)).max(initial=0.0))
        history.append(res)
        _progress(verbose, "op-block", sweeps, res)
        if res <= tol:
            break
    return NodalField(grid, u), SolveReport(sweeps, res, 0.0, "op-block", {"h": grid.h}, res <= tol, history=history)
