"""Randomized property checks with brute-force oracles.

Used by the ``check`` subcommand and by the test suite. Every check returns a
:class:`CheckResult`; none of them raises on a failed property.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import operators as ops
from .directions import coprime_stencil, orthogonal_bases, rotated_bases, superbases
from .domain import disk, square
from .geometry import lower_convex_hull, subdifferential_areas
from .grid import NodalField, build_grid
from .norms import error_norms_of


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# -- random data -----------------------------------------------------------------


def random_spd(rng: np.random.Generator, max_cond: float = 16.0, diagonal: bool = False) -> np.ndarray:
    lam = np.sort(rng.uniform(0.5, 2.0, 2))
    lam[1] = lam[0] * rng.uniform(1.0, max_cond)
    if diagonal:
        return np.diag(rng.permutation(lam))
    a = rng.uniform(0, math.pi)
    Q = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    M = Q @ np.diag(lam) @ Q.T
    return 0.5 * (M + M.T)


def quadratic(M, b=(0.0, 0.0), c: float = 0.0):
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)

    def q(X):
        X = np.asarray(X, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", X, M, X) + X @ b + c

    return q


def random_convex_field(grid, rng):
    """Random convex function sampled at the nodes: quadratic plus a max of planes."""
    M = random_spd(rng, 8.0)
    q = quadratic(M, rng.normal(size=2), rng.normal())
    P = rng.normal(size=(4, 2))
    c = rng.normal(size=4) * 0.3
    X = grid.points
    return q(X) + np.max(X @ P.T + c, axis=1)


# -- brute-force oracles -------------------------------------------------------


def envelope_oracle(points: np.ndarray, values: np.ndarray, i: int) -> float:
    """max a·x_i + b subject to a·x_j + b <= w_j for all j (linear program)."""
    x = points[i]
    A = np.column_stack([points, np.ones(len(points))])
    res = linprog(-np.array([x[0], x[1], 1.0]), A_ub=A, b_ub=values, bounds=[(None, None)] * 3, method="highs")
    if res.status != 0:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(-res.fun)


def halfplane_area_oracle(A: np.ndarray, b: np.ndarray) -> float:
    """Area of {p : A p <= b} by vertex enumeration; inf if unbounded."""
    scale = 1.0 + np.abs(b).max()
    i, j = np.triu_indices(len(A), 1)
    det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
    keep = np.abs(det) >= 1e-14 * np.maximum(np.abs(A[i]).max(1), np.abs(A[j]).max(1)) ** 2
    i, j, det = i[keep], j[keep], det[keep]
    # Cramer's rule for every pair of boundary lines
    px = (b[i] * A[j, 1] - b[j] * A[i, 1]) / det
    py = (A[i, 0] * b[j] - A[j, 0] * b[i]) / det
    P = np.column_stack([px, py])
    feasible = np.all(P @ A.T <= b + 1e-10 * scale, axis=1)
    verts = P[feasible]
    if len(verts) < 3:
        return 0.0
    V = verts
    # unbounded if some direction has no blocking constraint
    angles = np.linspace(0, 2 * math.pi, 720, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    if np.any(np.all(dirs @ A.T <= 1e-12, axis=1)):
        return math.inf
    try:
        return float(ConvexHull(V).volume)
    except QhullError:
        return 0.0


def lbr_oracle(M, W: int) -> float:
    """min over superbases of the coprime stencil of γ(e_i·M e_i)."""
    best = math.inf
    for t in superbases(coprime_stencil(W)).triples:
        d = [float(e @ M @ e) for e in t]
        for k in range(3):
            a, b, c = d[k], d[(k + 1) % 3], d[(k + 2) % 3]
            if a >= b + c:
                val = b * c
                break
        else:
            val = 0.5 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2]) - 0.25 * sum(x * x for x in d)
        best = min(best, val)
    return best


def pd_oracle(M, W: int) -> float:
    S = coprime_stencil(W).vectors.astype(float)
    return halfplane_area_oracle(2 * S, np.einsum("ij,jk,ik->i", S, M, S))


# -- operators -----------------------------------------------------------------


MONOTONE_OPERATORS = ("ws", "ws-variant", "lbr", "pd", "two-scale")


def _monotone_scheme(name, grid, g):
    cfg = ops.SchemeConfig(grid.h, delta=2 * grid.h, theta=0.4, width=2)
    if name == "two-scale":
        return ops.two_scale_scheme(grid, g, cfg)
    return ops.make_scheme(name, grid, g, cfg)


def check_monotonicity(name: str, pairs: int = 500, rng=None) -> CheckResult:
    """If v - w is maximal at x (v <= w with v(x) = w(x)) then OP[v](x) <= OP[w](x)."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = -math.inf
    count = 0
    grids = [build_grid(square(), 0.25), build_grid(disk(), 0.3)]
    for gi, grid in enumerate(grids):
        g = quadratic(np.eye(2))
        sch = _monotone_scheme(name, grid, g)
        n_here = pairs // len(grids) + (pairs % len(grids) if gi == 0 else 0)
        for _ in range(n_here):
            w = rng.normal(size=grid.n_nodes) * rng.choice([0.01, 0.1, 1.0])
            if rng.random() < 0.5:
                w += quadratic(random_spd(rng))(grid.points)
            w[grid.n_interior:] = g(grid.boundary_points)
            v = w - np.abs(rng.normal(size=grid.n_nodes)) * rng.choice([1e-3, 0.1, 1.0])
            v[grid.n_interior:] = w[grid.n_interior:]
            node = int(rng.integers(grid.n_interior))
            v[node] = w[node]
            a = sch.evaluate(v).values[node]
            b = sch.evaluate(w).values[node]
            worst = max(worst, a - b - 1e-12 * max(1.0, abs(b)))
            count += 1
    return CheckResult(f"monotonicity[{name}]", worst <= 0, f"{count} pairs, max violation {max(worst, 0):.2e}")


def check_filter_sandwich(fields: int = 50, rng=None) -> CheckResult:
    rng = np.random.default_rng(1) if rng is None else rng
    worst = 0.0
    for k in range(fields):
        h = [0.25, 0.125][k % 2]
        grid = build_grid(square(), h)
        alpha = float(rng.uniform(0.2, 2.0))
        cfg = ops.SchemeConfig(h, alpha=alpha, width=int(rng.integers(1, 3)))
        w = NodalField(grid, rng.normal(size=grid.n_nodes) * rng.choice([0.01, 1.0]))
        g = quadratic(np.eye(2))
        f = ops.ma_filtered(w, cfg, g=g).values
        s = ops.ma_ws(w, cfg, g=g).values
        worst = max(worst, float(np.max(np.abs(f - s))) / h**alpha)
    return CheckResult("filter sandwich", worst <= 1 + 1e-12, f"max |F - WS|/h^alpha = {worst:.6f}")


def _dyadic(x, bits: int = 10):
    return np.round(np.asarray(x) * 2**bits) / 2**bits


def check_quadratic_exactness(count: int = 20, rng=None) -> list[CheckResult]:
    """fd9 for full SPD M, ws for diagonal M, lbr and pd with stencils sized by the condition number.

    Coefficients are dyadic rationals so nodal values and second differences are
    exact in floating point; the errors then measure the stencil algebra alone.
    """
    rng = np.random.default_rng(2) if rng is None else rng
    h = 1 / 16
    grid = build_grid(square(), h)
    pts = grid.interior_points
    err = dict.fromkeys(("fd9", "ws", "lbr", "pd", "lbr-oracle", "pd-oracle"), 0.0)
    for _ in range(count):
        M = _dyadic(random_spd(rng, 15.0))
        D = _dyadic(random_spd(rng, 15.0, diagonal=True))
        cond = np.linalg.cond(M)
        q = quadratic(M, _dyadic(rng.uniform(-1, 1, 2)), float(_dyadic(rng.uniform(-1, 1))))
        u = NodalField.from_function(grid, q)
        deep = np.max(np.abs(pts), axis=1) <= 1 - 1.5 * h
        err["fd9"] = max(err["fd9"], np.abs(ops.ma_fd9(u, g=q).values[deep] - np.linalg.det(M)).max())
        qd = quadratic(D)
        ud = NodalField.from_function(grid, qd)
        err["ws"] = max(err["ws"], np.abs(ops.ma_ws(ud, ops.SchemeConfig(h), g=qd).values[deep] - np.linalg.det(D)).max())
        Wl = int(math.ceil(2 * math.sqrt(cond)))
        Wp = int(math.ceil(math.sqrt(2) * math.sqrt(cond)))
        for name, W, fn in (("lbr", Wl, ops.ma_lbr), ("pd", Wp, ops.ma_pd)):
            nodes = np.flatnonzero(np.max(np.abs(pts), axis=1) <= min(0.25, 1 - (W + 0.5) * h))[:4]
            vals = fn(u, g=q, width=W).values[nodes]
            err[name] = max(err[name], np.abs(vals - np.linalg.det(M)).max())
            oracle = lbr_oracle(M, W) if name == "lbr" else pd_oracle(M, W)
            err[name + "-oracle"] = max(err[name + "-oracle"], np.abs(vals - oracle).max())
    out = []
    for k, v in err.items():
        tol = 1e-12 if k in ("fd9", "ws") else 1e-10
        out.append(CheckResult(f"quadratic exactness[{k}]", v <= tol, f"max error {v:.2e} over {count} M"))
    return out


# -- geometry --------------------------------------------------------------------


def check_envelope_oracle(fields: int = 200, rng=None) -> CheckResult:
    """Hull envelope values and subdifferential areas against LP/vertex-enumeration oracles."""
    rng = np.random.default_rng(3) if rng is None else rng
    worst_env = 0.0
    worst_area = 0.0
    for k in range(fields):
        h = [0.5, 0.4, 0.25, 0.2][k % 4]
        dom = square() if k % 3 else disk()
        grid = build_grid(dom, h)
        if k % 2:
            vals = random_convex_field(grid, rng)
        else:
            vals = rng.normal(size=grid.n_nodes) + quadratic(random_spd(rng))(grid.points)
        env = lower_convex_hull(NodalField(grid, vals))
        oracle = np.array([envelope_oracle(grid.points, vals, i) for i in range(grid.n_nodes)])
        scale = max(1.0, np.abs(vals).max())
        worst_env = max(worst_env, np.abs(env.envelope - oracle).max() / scale)
        areas = subdifferential_areas(env, np.arange(grid.n_interior))
        for i in range(grid.n_interior):
            if not env.on_envelope[i]:
                continue
            A = grid.points - grid.points[i]
            m = np.any(A != 0, axis=1)
            exact = halfplane_area_oracle(A[m], (vals - vals[i])[m])
            worst_area = max(worst_area, abs(areas[i] - exact) / max(1.0, exact))
    ok = worst_env <= 1e-9 and worst_area <= 1e-8
    return CheckResult("envelope vs supporting-plane oracle", ok,
                       f"{fields} fields, envelope err {worst_env:.2e}, area err {worst_area:.2e}")


def check_maximum_principle(instances: int = 100, rng=None) -> CheckResult:
    """Convex v, w with v >= w on the boundary and |∂v| <= |∂w| at nodes satisfy v >= w."""
    rng = np.random.default_rng(4) if rng is None else rng
    bad = 0
    checked = 0
    for k in range(instances):
        grid = build_grid(square() if k % 2 else disk(), [0.25, 0.2][k % 2])
        w = random_convex_field(grid, rng)
        s = rng.uniform(0.0, 1.0)
        a = rng.normal(size=2)
        v = s * w + grid.points @ a
        bnd = slice(grid.n_interior, None)
        v += max(0.0, float(np.max(w[bnd] - v[bnd]))) + rng.uniform(0, 0.1)
        aw = subdifferential_areas(lower_convex_hull(NodalField(grid, w)), np.arange(grid.n_interior))
        av = subdifferential_areas(lower_convex_hull(NodalField(grid, v)), np.arange(grid.n_interior))
        if np.all(av <= aw * (1 + 1e-12) + 1e-14) and np.all(v[bnd] >= w[bnd]):
            checked += 1
            if np.any(w > v + 1e-12 * max(1.0, np.abs(w).max())):
                bad += 1
    return CheckResult("discrete maximum principle", bad == 0 and checked == instances,
                       f"{checked} instances with premises met, {bad} violations")


# -- solvers -----------------------------------------------------------------------


def check_newton_derivative(fields: int = 20, rng=None) -> CheckResult:
    """Assembled Jacobian times a direction against central finite differences."""
    rng = np.random.default_rng(5) if rng is None else rng
    worst = 0.0
    kinks = 0
    names = ("ws", "ws-variant", "fd9", "filtered", "lbr", "two-scale", "pd")
    for k in range(fields):
        grid = build_grid(square(), 0.125)
        g = quadratic(np.eye(2))
        vals = random_convex_field(grid, rng)
        vals[grid.n_interior:] = g(grid.boundary_points)
        vals[: grid.n_interior] += 0.2 * quadratic(np.eye(2))(grid.interior_points)
        name = names[k % len(names)]
        cfg = ops.SchemeConfig(grid.h, delta=2 * grid.h, theta=0.4, alpha=1.0, width=2)
        sch = ops.two_scale_scheme(grid, g, cfg) if name == "two-scale" else ops.make_scheme(name, grid, g, cfg)
        _, J = sch.linearize(vals)
        d = rng.normal(size=grid.n_interior)
        eps = 1e-6

        def F(t):
            x = vals.copy()
            x[: grid.n_interior] += t * d
            return sch.evaluate(x).values

        fp, f0, fm = F(eps), F(0.0), F(-eps)
        fd = (fp - fm) / (2 * eps)
        jd = J @ d
        # rows whose active branch switches inside ±eps have no derivative to compare
        smooth = np.abs((fp - f0) - (f0 - fm)) / eps <= 1e-3 * (1 + np.abs(fd))
        kinks += int((~smooth).sum())
        if smooth.any():
            rel = np.linalg.norm((fd - jd)[smooth]) / max(np.linalg.norm(fd[smooth]), 1e-300)
            worst = max(worst, rel)
    return CheckResult("Newton directional derivative", worst <= 1e-4,
                       f"max relative error {worst:.2e}, {kinks} kink rows skipped")


def check_cone(h: float = 1 / 32) -> list[CheckResult]:
    """Point mass π at the origin of the unit disk with g = |x|: the solution is close to |x|."""
    from .problems import cone
    from .solvers import op_solve

    prob = cone()
    grid = build_grid(prob.domain, h)
    u, rep = op_solve(prob.masses(grid), prob.g, grid)
    err = float(np.abs(u.values - prob.exact_u(grid.points)).max())
    i0 = int(np.argmin(np.linalg.norm(grid.interior_points, axis=1)))
    area = float(subdifferential_areas(lower_convex_hull(u), np.array([i0]))[0])
    return [
        CheckResult("cone L-infinity within 3h", rep.converged and err <= 3 * h, f"error {err:.3e}, 3h = {3 * h:.3e}"),
        CheckResult("cone subdifferential area within 2% of pi", abs(area - math.pi) <= 0.02 * math.pi,
                    f"area {area:.6f}"),
    ]


# -- harness -----------------------------------------------------------------------


def check_norm_homogeneity(trials: int = 20, rng=None) -> CheckResult:
    rng = np.random.default_rng(6) if rng is None else rng
    grid = build_grid(square(), 0.125)
    worst = 0.0
    for _ in range(trials):
        e = rng.normal(size=grid.n_nodes)
        c = rng.normal() * 10
        a = np.array(error_norms_of(grid, e)[:4])
        b = np.array(error_norms_of(grid, c * e)[:4])
        worst = max(worst, float(np.max(np.abs(b - abs(c) * a) / np.maximum(abs(c) * a, 1e-300))))
    return CheckResult("norm homogeneity", worst <= 1e-12, f"max relative deviation {worst:.2e}")


def check_direction_families() -> list[CheckResult]:
    out = []
    counts = [len(coprime_stencil(W)) for W in (1, 2, 3)]
    out.append(CheckResult("coprime stencil sizes", counts == [8, 16, 32], str(counts)))
    nb = [len(orthogonal_bases(coprime_stencil(W))) for W in (1, 2, 3)]
    out.append(CheckResult("orthogonal basis counts", nb == [4, 8, 16], str(nb)))
    out.append(CheckResult("rotated frames for theta=0.1", len(rotated_bases(0.1)) == 16, str(len(rotated_bases(0.1)))))
    return out


def check_partition(rng=None) -> CheckResult:
    from .grid import cell_measures

    worst = 0.0
    for dom in (square(), disk()):
        for h in (0.5, 0.2, 0.1):
            g = build_grid(dom, h)
            worst = max(worst, abs(cell_measures(g).sum() - dom.area) / dom.area)
    return CheckResult("cell partition sums to the domain area", worst <= 1e-12, f"max relative error {worst:.2e}")


def run_checks(module: str = "all", seed: int = 0, quick: bool = False, stream=sys.stdout) -> list[CheckResult]:
    """Run the suites of one module (or all); returns the failed results."""
    rng = np.random.default_rng(seed)
    n = 0.1 if quick else 1.0
    suites = {
        "domain_grid": lambda: [check_partition()],
        "directions": check_direction_families,
        "operators": lambda: (
            [check_monotonicity(op, max(10, int(500 * n)), rng) for op in MONOTONE_OPERATORS]
            + [check_filter_sandwich(max(5, int(50 * n)), rng)]
            + check_quadratic_exactness(max(3, int(20 * n)), rng)
        ),
        "geometry": lambda: [check_envelope_oracle(max(10, int(200 * n)), rng),
                             check_maximum_principle(max(10, int(100 * n)), rng)],
        "solvers": lambda: [check_newton_derivative(max(7, int(20 * n)), rng)] + check_cone(),
        "harness": lambda: [check_norm_homogeneity(20, rng)],
    }
    chosen = list(suites) if module == "all" else [module]
    failed = []
    for name in chosen:
        for res in suites[name]():
            print(res.line(), file=stream, flush=True)
            if not res.passed:
                failed.append(res)
    return failed
