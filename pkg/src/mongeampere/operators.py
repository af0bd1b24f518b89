"""Discrete Monge-Ampère operators on nodal fields.

Every operator is assembled as a :class:`Scheme`: a set of affine slot
functionals per interior node (second differences, interpolated differences,
neighbour differences) plus a node-local nonlinearity evaluated by the
compiled kernels. Schemes are reused by the solvers, so the geometric
preprocessing (boundary intersections, interpolation weights) happens once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import _kernels as K
from .directions import (
    IntegerStencil,
    OrthogonalBasisFamily,
    SuperbasisList,
    UnitBasisFamily,
    coprime_stencil,
    orthogonal_bases,
    superbases,
)
from .domain import SQUARE
from .grid import Grid, NodalField

BoundaryData = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization parameters.

    ``delta`` and ``theta`` are only used by the two-scale and convex-envelope
    operators, ``alpha`` by the filtered operator and ``delta_reg`` by the
    regularized wide-stencil operator.
    """

    h: float
    delta: float | None = None
    theta: float | None = None
    alpha: float = 1.0
    delta_reg: float = 0.0
    width: int = 1

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if not (0 < self.alpha <= 2):
            raise ValueError("alpha must lie in (0, 2]")
        if self.delta_reg < 0:
            raise ValueError("delta_reg must be nonnegative")
        if self.delta is not None and self.delta < self.h * (1 - 1e-12):
            raise ValueError("delta must be at least h")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("h", "delta", "theta", "alpha", "delta_reg", "width")}


@dataclass
class OperatorEval:
    """Operator values at interior nodes and the index of the active basis.

    ``argmin`` is -1 for operators without a min over bases. For polygon
    operators it holds 1 where the polygon hit the bounding box.
    """

    values: np.ndarray
    argmin: np.ndarray
    nodes: np.ndarray

    def to_csv(self, path, grid: Grid):
        """Per-node debug dump: node id, coordinates, value, active basis."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "value", "argmin"])
            for n, v, a in zip(self.nodes, self.values, self.argmin):
                x, y = grid.points[n]
                w.writerow([int(n), repr(float(x)), repr(float(y)), repr(float(v)), int(a)])


# -- slot programs -------------------------------------------------------------


@dataclass
class Program:
    rows: np.ndarray
    cc: np.ndarray
    idx: np.ndarray
    cf: np.ndarray
    cst: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.cc.shape[1]

    def values(self, u) -> np.ndarray:
        return K.slot_values(np.asarray(u, dtype=float), self.rows, self.cc, self.idx, self.cf, self.cst)

    @staticmethod
    def concat(parts: list["Program"]) -> "Program":
        M = max(p.idx.shape[2] for p in parts)

        def pad(a, fill):
            if a.shape[2] == M:
                return a
            extra = np.full(a.shape[:2] + (M - a.shape[2],), fill, dtype=a.dtype)
            return np.concatenate([a, extra], axis=2)

        return Program(
            parts[0].rows,
            np.concatenate([p.cc for p in parts], 1),
            np.concatenate([pad(p.idx, -1) for p in parts], 1),
            np.concatenate([pad(p.cf, 0.0) for p in parts], 1),
            np.concatenate([p.cst for p in parts], 1),
        )


def _rows(grid: Grid, rows) -> np.ndarray:
    if rows is None:
        return np.arange(grid.n_interior, dtype=np.int64)
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    if np.any((rows < 0) | (rows >= grid.n_interior)):
        raise ValueError("rows must be interior node ids")
    return rows


def _require_g(g):
    if g is None:
        raise ValueError("boundary data g is required for stencils that leave the nodal set")
    return g


def lattice_differences(grid: Grid, dirs, g: BoundaryData | None, rows=None, normalized: bool = True) -> Program:
    """Second differences along integer directions, boundary-aware.

    When x ± h·e is not a node, the step is shortened to the boundary
    intersection and the datum g is used there. ``normalized`` divides by
    |e|²h², otherwise by h² only.
    """
    rows = _rows(grid, rows)
    dirs = np.asarray(dirs, dtype=np.int64).reshape(-1, 2)
    n, nd = len(rows), len(dirs)
    h = grid.h
    X = grid.points[rows]
    cc = np.empty((n, nd))
    idx = np.full((n, nd, 2), -1, dtype=np.int64)
    cf = np.zeros((n, nd, 2))
    cst = np.zeros((n, nd))
    for k, e in enumerate(dirs):
        s = grid.step(e)
        L2 = float(s @ s) / (h * h) if normalized else 1.0
        rho = np.ones((n, 2))
        vals = np.zeros((n, 2))
        for side, sg in enumerate((1.0, -1.0)):
            j = grid.neighbor(rows, sg * e)
            idx[:, k, side] = j
            miss = j < 0
            if miss.any():
                t = grid.domain.exit_distance(X[miss], sg * s)
                t = np.clip(t, 1e-300, 1.0)
                rho[miss, side] = t
                vals[miss, side] = _require_g(g)(X[miss] + sg * t[:, None] * s)
        rp, rm = rho[:, 0], rho[:, 1]
        scale = 2.0 / ((rp + rm) * L2 * h * h)
        cc[:, k] = -scale * (1.0 / rp + 1.0 / rm)
        for side, r in ((0, rp), (1, rm)):
            on = idx[:, k, side] >= 0
            cf[:, k, side] = np.where(on, scale / r, 0.0)
            cst[:, k] += np.where(on, 0.0, scale / r * vals[:, side])
    return Program(rows, cc, idx, cf, cst)


def mixed_difference(grid: Grid, g: BoundaryData | None, rows=None) -> Program:
    """Centered mixed difference (∂₁∂₂) from the four diagonal neighbours."""
    rows = _rows(grid, rows)
    n = len(rows)
    h = grid.h
    X = grid.points[rows]
    idx = np.full((n, 1, 4), -1, dtype=np.int64)
    cf = np.zeros((n, 1, 4))
    cst = np.zeros((n, 1))
    for m, (e, c) in enumerate((((1, 1), 1.0), ((-1, 1), -1.0), ((1, -1), -1.0), ((-1, -1), 1.0))):
        j = grid.neighbor(rows, e)
        w = c / (4 * h * h)
        idx[:, 0, m] = j
        cf[:, 0, m] = np.where(j >= 0, w, 0.0)
        miss = j < 0
        if miss.any():
            cst[miss, 0] += w * _require_g(g)(X[miss] + grid.step(e))
    return Program(rows, np.zeros((n, 1)), idx, cf, cst)


def interpolated_differences(grid: Grid, dirs, delta: float, g: BoundaryData | None, rows=None) -> Program:
    """Two-scale second differences (I u(x+ρδw) − 2u(x) + I u(x−ρδw))/(ρδ)².

    ρ is the largest value in (0,1] keeping both endpoints in the closed
    domain; an endpoint on the boundary uses g, the other the P1 interpolant.
    """
    rows = _rows(grid, rows)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 2)
    n, nd = len(rows), len(dirs)
    X = grid.points[rows]
    dom = grid.domain
    tri = grid.triangulation
    cc = np.empty((n, nd))
    idx = np.full((n, nd, 6), -1, dtype=np.int64)
    cf = np.zeros((n, nd, 6))
    cst = np.zeros((n, nd))
    for k, w in enumerate(dirs):
        tp = dom.exit_distance(X, w)
        tm = dom.exit_distance(X, -w)
        step = np.minimum(delta, np.minimum(tp, tm))
        inv = 1.0 / (step * step)
        cc[:, k] = -2.0 * inv
        for side, (sg, t) in enumerate(((1.0, tp), (-1.0, tm))):
            P = X + sg * step[:, None] * w
            onb = t <= step * (1 + 1e-12)
            if onb.any():
                cst[onb, k] += inv[onb] * _require_g(g)(P[onb])
            ins = ~onb
            if ins.any():
                ids, wt = tri.weights(P[ins])
                idx[ins, k, 3 * side: 3 * side + 3] = ids
                cf[ins, k, 3 * side: 3 * side + 3] = wt * inv[ins, None]
    # fold self-references into the center coefficient
    self_ref = idx == rows[:, None, None]
    if self_ref.any():
        cc += np.where(self_ref, cf, 0.0).sum(axis=2)
        cf[self_ref] = 0.0
        idx[self_ref] = -1
    cf[idx < 0] = 0.0
    return Program(rows, cc, idx, cf, cst)


def neighbor_differences(grid: Grid, width: int, rows=None, radius: float | None = None):
    """Slots u(y) − u(x) over nearby nodes y, with offsets y − x.

    Lattice neighbours use the coprime offsets of max-norm at most ``width``;
    off-lattice boundary nodes within the same box are added as well. With
    ``radius`` every node within that distance is used instead.
    Returns (program, offsets, valid).
    """
    rows = _rows(grid, rows)
    X = grid.points[rows]
    h = grid.h
    lists = []
    if radius is not None:
        tree = cKDTree(grid.points)
        for r, x in zip(rows, X):
            nb = np.array(sorted(tree.query_ball_point(x, radius)), dtype=np.int64)
            lists.append(nb[nb != r])
    else:
        S = coprime_stencil(width).vectors
        J = grid.neighbor(np.repeat(rows, len(S)), np.tile(S, (len(rows), 1))).reshape(len(rows), len(S))
        off = ~grid.on_lattice
        off_ids = np.flatnonzero(off)
        extra = [[] for _ in rows]
        if len(off_ids):
            tree = cKDTree(grid.points[off_ids])
            reach = tree.query_ball_point(X, (width + 1) * h * math.sqrt(2))
            for q, cand in enumerate(reach):
                if cand:
                    c = off_ids[np.asarray(cand)]
                    dxy = np.abs(grid.points[c] - X[q]).max(axis=1)
                    extra[q] = c[dxy <= (width + 1e-9) * h].tolist()
        for q in range(len(rows)):
            nb = J[q][J[q] >= 0]
            if extra[q]:
                nb = np.concatenate([nb, np.asarray(extra[q], dtype=np.int64)])
            lists.append(nb)
    Kmax = max(len(nb) for nb in lists)
    n = len(rows)
    idx = np.full((n, Kmax, 1), -1, dtype=np.int64)
    valid = np.zeros((n, Kmax), dtype=np.bool_)
    A = np.zeros((n, Kmax, 2))
    for q, nb in enumerate(lists):
        m = len(nb)
        idx[q, :m, 0] = nb
        valid[q, :m] = True
        A[q, :m] = grid.points[nb] - X[q]
    cf = np.where(idx >= 0, 1.0, 0.0)
    cc = np.where(valid, -1.0, 0.0)
    return Program(rows, cc, idx, cf, np.zeros((n, Kmax))), A, valid


# -- schemes ------------------------------------------------------------------


class Scheme:
    """A discrete operator bound to a grid and boundary data.

    ``evaluate`` returns operator values at the rows, ``linearize`` adds the
    Jacobian with respect to the interior unknowns, and ``rhs`` is the value
    the operator must take at a solution.
    """

    monotone = True

    def __init__(self, name: str, grid: Grid, kind: int, program: Program, groups=None, A=None,
                 valid=None, p0: float = 0.0, nws: int = 0, rhs=None, config: SchemeConfig | None = None):
        self.name = name
        self.grid = grid
        self.kind = kind
        self.program = program
        n, Ks = program.cc.shape
        self.groups = np.zeros((1, 2), dtype=np.int64) if groups is None else np.ascontiguousarray(groups, dtype=np.int64)
        self.A = np.zeros((n, Ks, 2)) if A is None else np.ascontiguousarray(A, dtype=float)
        if self.A.ndim == 2:
            self.A = np.ascontiguousarray(np.broadcast_to(self.A, (n, Ks, 2)))
        self.valid = np.ones((n, Ks), dtype=np.bool_) if valid is None else np.ascontiguousarray(valid)
        self.p0 = float(p0)
        self.nws = int(nws)
        self.rhs = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=float)
        self.config = config
        # kind used for Newton directions; may differ from ``kind`` by a safer Jacobian
        self.newton_kind = {K.FILTERED: K.FILTERED_MONO, K.WS: K.WS_NEWTON}.get(kind, kind)
        # leading slots that are second differences; 0 means none (nodal convexity is used instead)
        self.convexity_slots = Ks

    @property
    def rows(self) -> np.ndarray:
        return self.program.rows

    def _args(self):
        p = self.program
        return (p.rows, p.cc, p.idx, p.cf, p.cst, self.valid, self.groups, self.A, self.p0, self.nws)

    def evaluate(self, u) -> OperatorEval:
        u = _values(u)
        vals, arg = K.evaluate(self.kind, u, *self._args())
        return OperatorEval(vals, arg, self.rows)

    def residual(self, u) -> np.ndarray:
        return self.evaluate(u).values - self.rhs

    def linearize(self, u, exact: bool = True):
        """(values, J) with J[r, j] = ∂value_r/∂u_j over interior nodes j.

        With ``exact=False`` the Newton matrix is returned instead: the WS
        rows use the right derivative of t⁺ at nonpositive factors and the
        filtered rows drop the decreasing branch of the filter.
        """
        u = _values(u)
        kind = self.kind if exact else self.newton_kind
        vals, arg, ri, ci, vv = K.linearize(kind, u, *self._args())
        ni = self.grid.n_interior
        keep = ci < ni
        J = sp.csr_matrix((vv[keep], (ri[keep], ci[keep])), shape=(len(self.rows), ni))
        J.sum_duplicates()
        return vals, J

    def rounding_floor(self, u, J=None) -> np.ndarray:
        """Per-row residual change caused by perturbing the inputs by a few ulps.

        Rows whose stencil reaches a boundary point very close to the node
        have huge coefficients, so their residual cannot be resolved below
        this level in double precision.
        """
        u = _values(u)
        if J is None:
            _, J = self.linearize(u, exact=False)
        rows = self.rows
        diag = np.abs(np.asarray(J[np.arange(len(rows)), rows]).ravel())
        # coefficients of a difference row sum to zero, so 2|diag| bounds the row sum
        return 8.0 * np.finfo(float).eps * float(np.abs(u).max(initial=0.0)) * 2.0 * diag

    def gs_sweep(self, u: np.ndarray, order: np.ndarray, tol_local: float, step0: float):
        return K.gauss_seidel_sweep(self.kind, u, self.rows, order, self.rhs, *self._args()[1:],
                                    tol_local, step0)

    def with_rhs(self, rhs) -> "Scheme":
        s = _copy(self)
        s.rhs = np.asarray(rhs, dtype=float)
        return s


def _copy(s: Scheme) -> Scheme:
    new = object.__new__(type(s))
    new.__dict__.update(s.__dict__)
    return new


def _values(u) -> np.ndarray:
    if isinstance(u, NodalField):
        return u.values
    return np.ascontiguousarray(u, dtype=float)


def _basis_slots(bases: np.ndarray):
    """Unique directions (up to sign) and the slot index pairs of each basis."""
    dirs: list[tuple] = []
    where: dict[tuple, int] = {}
    groups = []
    for basis in np.asarray(bases):
        gi = []
        for v in basis:
            v = tuple(np.asarray(v).tolist())
            key = v if v in where else tuple(-c for c in v)
            if key not in where:
                where[v] = len(dirs)
                dirs.append(v)
                key = v
            gi.append(where[key])
        groups.append(gi)
    return np.array(dirs), np.array(groups, dtype=np.int64)


def _ws_family(config: SchemeConfig, bases) -> np.ndarray:
    if bases is None:
        bases = orthogonal_bases(coprime_stencil(config.width))
    if isinstance(bases, OrthogonalBasisFamily):
        bases = bases.bases
    return np.asarray(bases)


def ws_scheme(grid, g, config, bases=None, variant=False, regularized=False, rhs=None) -> Scheme:
    dirs, groups = _basis_slots(_ws_family(config, bases))
    prog = lattice_differences(grid, dirs, g)
    if regularized:
        if config.delta_reg <= 0:
            raise ValueError("the regularized operator needs delta_reg > 0")
        return Scheme("ws-reg", grid, K.WS_REG, prog, groups, p0=config.delta_reg, rhs=rhs, config=config)
    kind = K.WS_VARIANT if variant else K.WS
    return Scheme("ws-variant" if variant else "ws", grid, kind, prog, groups, rhs=rhs, config=config)


def _require_cartesian(grid: Grid):
    if grid.domain.kind != SQUARE or not grid.is_canonical:
        raise ValueError("the nine-point operator is defined on square domains with the canonical basis")


def fd9_program(grid: Grid, g) -> Program:
    _require_cartesian(grid)
    pure = lattice_differences(grid, [(1, 0), (0, 1)], g)
    return Program.concat([pure, mixed_difference(grid, g)])


def fd9_scheme(grid, g, config=None, rhs=None) -> Scheme:
    s = Scheme("fd9", grid, K.FD9, fd9_program(grid, g), rhs=rhs, config=config)
    s.monotone = False
    s.convexity_slots = 2
    return s


def filtered_scheme(grid, g, config, bases=None, rhs=None) -> Scheme:
    dirs, groups = _basis_slots(_ws_family(config, bases))
    prog = Program.concat([lattice_differences(grid, dirs, g), fd9_program(grid, g)])
    s = Scheme("filtered", grid, K.FILTERED, prog, groups, p0=config.h**config.alpha, nws=len(dirs),
               rhs=rhs, config=config)
    s.monotone = False
    s.convexity_slots = len(dirs)
    return s


def lbr_scheme(grid, g, config, triples=None, rhs=None) -> Scheme:
    if triples is None:
        triples = superbases(coprime_stencil(config.width))
    if isinstance(triples, SuperbasisList):
        triples = triples.triples
    dirs, groups = _basis_slots(np.asarray(triples))
    prog = lattice_differences(grid, dirs, g, normalized=False)
    return Scheme("lbr", grid, K.LBR, prog, groups, rhs=rhs, config=config)


def pd_scheme(grid, g, config, stencil=None, rhs=None) -> Scheme:
    if stencil is None:
        stencil = coprime_stencil(config.width)
    vecs = stencil.vectors if isinstance(stencil, IntegerStencil) else np.asarray(stencil)
    vecs = np.asarray(vecs, dtype=np.int64).reshape(-1, 2)
    if len(vecs) == 0 or np.linalg.matrix_rank(vecs.astype(float)) < 2:
        raise ValueError("power-diagram stencil must span the plane")
    dirs, _ = _basis_slots(vecs[:, None, :])
    prog = lattice_differences(grid, dirs, g, normalized=False)
    A = 2.0 * grid.step(dirs) / grid.h
    return Scheme("pd", grid, K.PD, prog, A=A, rhs=rhs, config=config)


def _frames(config: SchemeConfig, frames):
    if frames is None:
        from .directions import rotated_bases

        if config.theta is None:
            raise ValueError("two-scale operators need theta or an explicit frame family")
        frames = rotated_bases(config.theta)
    if isinstance(frames, UnitBasisFamily):
        frames = frames.bases
    return np.asarray(frames, dtype=float).reshape(-1, 2, 2)


def two_scale_scheme(grid, g, config, frames=None, rhs=None) -> Scheme:
    if config.delta is None:
        raise ValueError("two-scale operators need delta")
    fr = _frames(config, frames)
    dirs = fr.reshape(-1, 2)
    groups = np.arange(len(dirs), dtype=np.int64).reshape(-1, 2)
    prog = interpolated_differences(grid, dirs, config.delta, g)
    return Scheme("two-scale", grid, K.WS_VARIANT, prog, groups, rhs=rhs, config=config)


def ce_scheme(grid, f_values, config, frames=None, g=None) -> Scheme:
    """min{f − w, min_w ∇²_δw w} = 0 characterizes the convex envelope of f."""
    if config.delta is None:
        raise ValueError("the convex-envelope operator needs delta")
    fr = _frames(config, frames)
    dirs = fr.reshape(-1, 2)
    if g is None:
        g = _nodal_trace(grid, f_values)
    prog = interpolated_differences(grid, dirs, config.delta, g)
    n = len(prog.rows)
    fv = np.asarray(f_values, dtype=float)
    fv = fv[prog.rows] if fv.shape[0] == grid.n_nodes else fv
    gap = Program(prog.rows, -np.ones((n, 1)), np.full((n, 1, 1), -1, dtype=np.int64), np.zeros((n, 1, 1)),
                  fv[:, None].copy())
    s = Scheme("ce", grid, K.CE, Program.concat([prog, gap]), config=config)
    s.convexity_slots = prog.n_slots
    return s


def _nodal_trace(grid: Grid, values):
    """Boundary data from nodal values: P1 along the boundary polygon."""
    vals = np.asarray(values, dtype=float)
    if vals.shape[0] != grid.n_nodes:
        raise ValueError("nodal boundary values need a full nodal vector")
    field_ = NodalField(grid, vals)

    def g(P):
        from .grid import p1_interpolate

        return p1_interpolate(field_, np.atleast_2d(P))

    return g


def op_local_scheme(grid, masses, width: int = 2, rows=None, radius=None) -> Scheme:
    """Subdifferential areas from neighbour half-planes p·(y−x) <= u(y) − u(x).

    Exact for nodally convex fields whose adjacent sets fit in the window.
    """
    prog, A, valid = neighbor_differences(grid, width, rows=rows, radius=radius)
    s = Scheme("op", grid, K.OP, prog, A=A, valid=valid, rhs=masses)
    s.convexity_slots = 0
    return s


def make_scheme(name: str, grid: Grid, g, config: SchemeConfig, f_values=None, masses=None) -> Scheme:
    """Build a scheme by its command-line name."""
    if name == "ws":
        return ws_scheme(grid, g, config, rhs=f_values)
    if name == "ws-variant":
        return ws_scheme(grid, g, config, variant=True, rhs=f_values)
    if name == "ws-reg":
        return ws_scheme(grid, g, config, regularized=True, rhs=f_values)
    if name == "fd9":
        return fd9_scheme(grid, g, config, rhs=f_values)
    if name == "filtered":
        return filtered_scheme(grid, g, config, rhs=f_values)
    if name == "lbr":
        return lbr_scheme(grid, g, config, rhs=f_values)
    if name == "pd":
        rhs = None if f_values is None else np.asarray(f_values)
        return pd_scheme(grid, g, config, rhs=rhs)
    if name == "two-scale":
        return two_scale_scheme(grid, g, config, rhs=f_values)
    if name == "op":
        return op_local_scheme(grid, masses, width=config.width)
    raise ValueError(f"unknown scheme {name!r}")


# -- public node-level and field-level operators --------------------------------


def _single(program: Program, u) -> float:
    return float(program.values(_values(u))[0, 0])


def _trace_default(field_: NodalField, g):
    """Without explicit boundary data the field's own boundary values are used."""
    return g if g is not None else _nodal_trace(field_.grid, field_.values)


def second_difference(field_: NodalField, node: int, e, g: BoundaryData | None = None) -> float:
    """Δ_e w at an interior node, shortened at the boundary when needed."""
    g = _trace_default(field_, g)
    return _single(lattice_differences(field_.grid, [e], g, rows=[node]), field_)


def directional_second_difference(field_: NodalField, node: int, w, delta: float,
                                  g: BoundaryData | None = None) -> float:
    """Two-scale second difference of the P1 interpolant along the unit vector w."""
    g = _trace_default(field_, g)
    return _single(interpolated_differences(field_.grid, [w], delta, g, rows=[node]), field_)


def ma_ws(field_: NodalField, config: SchemeConfig, bases=None, g=None) -> OperatorEval:
    """min over bases of Π (Δ_ν w)⁺."""
    g = _trace_default(field_, g)
    return ws_scheme(field_.grid, g, config, bases).evaluate(field_)


def ma_ws_variant(field_: NodalField, config: SchemeConfig, bases=None, g=None) -> OperatorEval:
    """min over bases of Π (Δ_ν w)⁺ − Σ (Δ_ν w)⁻."""
    g = _trace_default(field_, g)
    return ws_scheme(field_.grid, g, config, bases, variant=True).evaluate(field_)


def ma_ws_regularized(field_: NodalField, config: SchemeConfig, bases=None, g=None) -> OperatorEval:
    g = _trace_default(field_, g)
    return ws_scheme(field_.grid, g, config, bases, regularized=True).evaluate(field_)


def ma_fd9(field_: NodalField, h: float | None = None, g=None) -> OperatorEval:
    """Δ₁₁ w · Δ₂₂ w − (mixed difference)²; not monotone."""
    return fd9_scheme(field_.grid, _trace_default(field_, g)).evaluate(field_)


def ma_filtered(field_: NodalField, config: SchemeConfig, bases=None, g=None) -> OperatorEval:
    """Wide-stencil value corrected towards the nine-point value within h^α."""
    g = _trace_default(field_, g)
    return filtered_scheme(field_.grid, g, config, bases).evaluate(field_)


def ma_lbr(field_: NodalField, h: float | None = None, triples=None, g=None, width: int = 1) -> OperatorEval:
    cfg = SchemeConfig(field_.grid.h, width=width)
    g = _trace_default(field_, g)
    return lbr_scheme(field_.grid, g, cfg, triples).evaluate(field_)


def ma_pd(field_: NodalField, h: float | None = None, stencil=None, g=None, width: int = 1) -> OperatorEval:
    """Area of {p : 2p·e <= |e|²Δ_e w for all e in the stencil}."""
    cfg = SchemeConfig(field_.grid.h, width=width)
    g = _trace_default(field_, g)
    return pd_scheme(field_.grid, g, cfg, stencil).evaluate(field_)


def ma_two_scale(field_: NodalField, config: SchemeConfig, frames=None, g=None) -> OperatorEval:
    g = _trace_default(field_, g)
    return two_scale_scheme(field_.grid, g, config, frames).evaluate(field_)


def ce_op(field_: NodalField, f_values, config: SchemeConfig, frames=None, g=None) -> OperatorEval:
    return ce_scheme(field_.grid, f_values, config, frames, _trace_default(field_, g)).evaluate(field_)


def filter_s(t):
    """Continuous filter: identity on [-1,1], zero outside (-2,2), linear between."""
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    out = np.where(a <= 1, t, np.where(a >= 2, 0.0, np.where(t > 0, 2 - t, -t - 2)))
    return float(out) if out.ndim == 0 else out


def smooth_max(a, b, delta_reg: float):
    return 0.5 * (a + b + np.sqrt((np.asarray(a) - b) ** 2 + delta_reg**2))


def smooth_min(a, b, delta_reg: float):
    return 0.5 * (a + b - np.sqrt((np.asarray(a) - b) ** 2 + delta_reg**2))


def smooth_min_list(values, delta_reg: float):
    values = list(values)
    m = values[0]
    for v in values[1:]:
        m = smooth_min(m, v, delta_reg)
    return m


def lbr_gamma(d0: float, d1: float, d2: float) -> float:
    if min(d0, d1, d2) < 0:
        raise ValueError("lbr_gamma expects nonnegative arguments")
    return float(K.lbr_gamma(float(d0), float(d1), float(d2)))
