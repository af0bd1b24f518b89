"""Translation-invariant nodal sets, nodal fields and P1 interpolation.

Interior nodes are the lattice points ``h·(z₁ẽ₁ + z₂ẽ₂)`` strictly inside the
domain. Boundary nodes are lattice points on the boundary, the intersections
of lattice lines with the boundary, polygon corners, and extra points inserted
wherever the boundary would otherwise have a gap wider than ``h``.

Node ids are ordered with all interior nodes first (row by row, x fastest)
followed by the boundary nodes in counterclockwise order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .domain import DISK, POLYGON, SQUARE, ConvexDomain, DomainError


class EmptyGridError(ValueError):
    """The domain contains no interior lattice node at the requested spacing."""


class Grid:
    """Immutable nodal set on a convex domain."""

    def __init__(self, domain: ConvexDomain, h: float, basis: np.ndarray, points: np.ndarray,
                 n_interior: int, lattice: np.ndarray):
        self.domain = domain
        self.h = float(h)
        self.basis = np.asarray(basis, dtype=np.int64)
        self.points = points
        self.points.flags.writeable = False
        self.n_interior = int(n_interior)
        # integer lattice coordinates per node; off-lattice boundary nodes hold a sentinel
        self.lattice = lattice
        self.lattice.flags.writeable = False
        on = self.on_lattice
        zs = lattice[on]
        self._zmin = zs.min(axis=0)
        shape = zs.max(axis=0) - self._zmin + 1
        self._lut = np.full(tuple(shape), -1, dtype=np.int64)
        self._lut[tuple((zs - self._zmin).T)] = np.flatnonzero(on)

    _OFF = np.iinfo(np.int64).min

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.n_nodes - self.n_interior

    @property
    def interior_points(self) -> np.ndarray:
        return self.points[: self.n_interior]

    @property
    def boundary_points(self) -> np.ndarray:
        return self.points[self.n_interior:]

    @property
    def on_lattice(self) -> np.ndarray:
        return self.lattice[:, 0] != self._OFF

    @property
    def is_canonical(self) -> bool:
        return bool(np.array_equal(self.basis, np.eye(2, dtype=np.int64)))

    @cached_property
    def is_cartesian_square(self) -> bool:
        """True when the domain is a square whose edges are lattice lines."""
        if self.domain.kind != SQUARE or not self.is_canonical:
            return False
        c = np.asarray(self.domain.center)
        a = self.domain.size
        edges = np.concatenate([c - a, c + a]) / self.h
        return bool(np.all(np.abs(edges - np.round(edges)) < 1e-9))

    def step(self, e) -> np.ndarray:
        """Physical displacement h·Σ e_j ẽ_j of integer lattice offsets e."""
        return self.h * (np.asarray(e, dtype=float) @ self.basis.astype(float))

    def node_at(self, z) -> np.ndarray:
        """Node ids of lattice coordinates z (shape (...,2)); -1 where no node."""
        z = np.asarray(z, dtype=np.int64)
        rel = z - self._zmin
        shape = np.array(self._lut.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(z.shape[:-1], -1, dtype=np.int64)
        r = rel[ok]
        out[ok] = self._lut[r[..., 0], r[..., 1]]
        return out

    def neighbor(self, ids, e) -> np.ndarray:
        """Node id of x + h·e for lattice nodes ``ids``; -1 if not a node."""
        ids = np.asarray(ids)
        return self.node_at(self.lattice[ids] + np.asarray(e, dtype=np.int64))

    @cached_property
    def triangulation(self) -> "Triangulation":
        return Triangulation(self)

    def summary(self) -> dict:
        return {
            "h": self.h,
            "basis": self.basis.tolist(),
            "n_interior": self.n_interior,
            "n_boundary": self.n_boundary,
            "domain": self.domain.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary())

    def __repr__(self) -> str:
        return f"Grid(h={self.h:g}, interior={self.n_interior}, boundary={self.n_boundary}, {self.domain.kind})"


@dataclass
class NodalField:
    """Real values on every node of a grid (interior first, then boundary)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "NodalField":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @property
    def interior(self) -> np.ndarray:
        return self.values[: self.grid.n_interior]

    @property
    def boundary(self) -> np.ndarray:
        return self.values[self.grid.n_interior:]

    def copy(self) -> "NodalField":
        return NodalField(self.grid, self.values.copy())


def build_grid(domain: ConvexDomain, h: float, basis=None) -> Grid:
    """Build the nodal set of ``domain`` at spacing ``h``."""
    if h <= 0:
        raise ValueError("h must be positive")
    B = np.eye(2, dtype=np.int64) if basis is None else np.asarray(basis, dtype=np.int64)
    if B.shape != (2, 2) or round(abs(np.linalg.det(B))) == 0:
        raise ValueError("basis must be two linearly independent integer vectors")
    if np.any(np.linalg.norm(B, axis=1) > 1 + 1e-12):
        raise ValueError("basis vectors must have length at most 1")
    Bf = B.astype(float)
    tol = 1e-10 * h

    x0, x1, y0, y1 = domain.bbox
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) / h
    zc = corners @ np.linalg.inv(Bf)
    lo = np.floor(zc.min(axis=0)).astype(int) - 1
    hi = np.ceil(zc.max(axis=0)).astype(int) + 1
    z1, z2 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1))
    Z = np.stack([z1.ravel(), z2.ravel()], axis=1)  # y-major, x fastest
    X = h * (Z @ Bf)
    lev = domain.level(X)
    inner = lev < -tol
    onb = np.abs(lev) <= tol
    if not inner.any():
        raise EmptyGridError(f"empty grid: no interior node at h={h:g}")

    bpts = [X[onb]]
    # intersections of lattice lines with the boundary
    for j in range(2):
        other = 1 - j
        for k in range(lo[other], hi[other] + 1):
            zz = np.zeros(2)
            zz[other] = k
            p = h * (zz @ Bf)
            d = h * Bf[j]
            t_in, t_out = domain.chord(p, d)
            if np.isfinite(t_in):
                bpts.append(np.array([p + t_in * d, p + t_out * d]))
    if domain.kind != DISK:
        bpts.append(domain._poly)
    bpts = np.concatenate(bpts, axis=0)
    bpts = _dedupe_boundary(domain, bpts, 1e-9 * h)
    bpts = _fill_gaps(domain, bpts, h)

    # lattice coordinates for boundary nodes that sit on the lattice
    zb = bpts @ np.linalg.inv(Bf) / h
    zr = np.round(zb)
    onlat = np.all(np.abs(zb - zr) < 1e-9, axis=1)
    zlat = np.full(bpts.shape, Grid._OFF, dtype=np.int64)
    zlat[onlat] = zr[onlat].astype(np.int64)

    pts = np.concatenate([X[inner], bpts], axis=0)
    lattice = np.concatenate([Z[inner].astype(np.int64), zlat], axis=0)
    return Grid(domain, h, B, np.ascontiguousarray(pts), int(inner.sum()), lattice)


def _angles(domain: ConvexDomain, pts: np.ndarray) -> np.ndarray:
    c = domain.centroid
    return np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])


def _dedupe_boundary(domain, pts, tol):
    order = np.argsort(_angles(domain, pts), kind="stable")
    pts = pts[order]
    keep = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - keep[-1]) > tol:
            keep.append(p)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= tol:
        keep.pop()
    return np.array(keep)


def _fill_gaps(domain, pts, h):
    """Insert boundary points so every boundary point is within h/2 of a node."""
    out = []
    m = len(pts)
    c = domain.centroid
    for i in range(m):
        p, q = pts[i], pts[(i + 1) % m]
        out.append(p)
        if domain.kind == DISK:
            r = domain.size
            a0 = math.atan2(p[1] - c[1], p[0] - c[0])
            a1 = math.atan2(q[1] - c[1], q[0] - c[0])
            phi = (a1 - a0) % (2 * math.pi)
            if m == 1:
                phi = 2 * math.pi
            if h / (4 * r) >= 1:
                continue
            step = 4 * math.asin(h / (4 * r))
            n = math.ceil(phi / step * (1 - 1e-12))
            for k in range(1, n):
                a = a0 + phi * k / n
                out.append(c + r * np.array([math.cos(a), math.sin(a)]))
        else:
            gap = np.linalg.norm(q - p)
            n = math.ceil(gap / h * (1 - 1e-12))
            for k in range(1, n):
                out.append(p + (q - p) * k / n)
    return np.array(out)


# -- ray queries ---------------------------------------------------------------


def ray_to_boundary(domain: ConvexDomain, x, w, delta: float) -> np.ndarray:
    """Largest ρ in (0,1] with x ± ρδw in the closed domain."""
    x = np.asarray(x, dtype=float)
    if np.any(domain.level(x) >= 0):
        raise DomainError("ray_to_boundary needs interior points")
    w = np.asarray(w, dtype=float)
    tp = domain.exit_distance(x, w)
    tm = domain.exit_distance(x, -w)
    return np.minimum(1.0, np.minimum(tp, tm) / delta)


def asymmetric_rays(domain: ConvexDomain, x, e, h: float, basis=None):
    """Step fractions (ρ₊, ρ₋) towards the boundary along ±h·e.

    Returns ``(rho_plus, rho_minus, interior_plus, interior_minus)``; a side
    whose full step stays in the closed domain reports ρ = 1 and True.
    """
    x = np.asarray(x, dtype=float)
    B = np.eye(2) if basis is None else np.asarray(basis, dtype=float)
    s = h * (np.asarray(e, dtype=float) @ B)
    tol = 1e-10 * h
    res = []
    for sgn in (1.0, -1.0):
        inside = domain.level(x + sgn * s) <= tol
        t = domain.exit_distance(x, sgn * s)
        res.append((np.where(inside, 1.0, np.minimum(t, 1.0)), inside))
    return res[0][0], res[1][0], res[0][1], res[1][1]


# -- triangulation and P1 interpolation ---------------------------------------


class Triangulation:
    """Triangulation of the nodal set used for P1 interpolation.

    Squares with lattice-line edges use the split lattice cells (diagonal from
    lower-left to upper-right). Other domains use a Delaunay triangulation of
    all nodes, so that boundary nodes carry the Dirichlet data into the
    interpolant. Points between the triangulated hull and a curved boundary
    take the value at their projection onto the nearest hull edge.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.structured = grid.is_cartesian_square
        if self.structured:
            c = np.asarray(grid.domain.center)
            a = grid.domain.size
            self._origin = c - a
            self._n = int(round(2 * a / grid.h))
            i, j = np.meshgrid(np.arange(self._n), np.arange(self._n), indexing="ij")
            base = np.stack([i.ravel(), j.ravel()], axis=1) + np.round(self._origin / grid.h).astype(np.int64)
            ll = grid.node_at(base)
            lr = grid.node_at(base + [1, 0])
            ur = grid.node_at(base + [1, 1])
            ul = grid.node_at(base + [0, 1])
            self.triangles = np.concatenate([np.stack([ll, lr, ur], 1), np.stack([ll, ur, ul], 1)])
        else:
            self._dl = Delaunay(grid.points)
            self.triangles = self._dl.simplices.astype(np.int64)
            hull = self._dl.convex_hull
            self._hull_edges = hull.astype(np.int64)

    def weights(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Node ids (P,3) and barycentric weights (P,3) of P1 interpolation at pts."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dom = self.grid.domain
        if np.any(dom.level(pts) > 1e-9 * dom.diameter):
            raise DomainError("interpolation point outside the domain")
        if self.structured:
            return self._structured_weights(pts)
        return self._delaunay_weights(pts)

    def _structured_weights(self, pts):
        h = self.grid.h
        rel = (pts - self._origin) / h
        cell = np.clip(np.floor(rel).astype(np.int64), 0, self._n - 1)
        s = rel[:, 0] - cell[:, 0]
        t = rel[:, 1] - cell[:, 1]
        base = cell + np.round(self._origin / h).astype(np.int64)
        ll = self.grid.node_at(base)
        lr = self.grid.node_at(base + [1, 0])
        ur = self.grid.node_at(base + [1, 1])
        ul = self.grid.node_at(base + [0, 1])
        low = s >= t
        ids = np.where(low[:, None], np.stack([ll, lr, ur], 1), np.stack([ll, ur, ul], 1))
        w = np.where(low[:, None], np.stack([1 - s, s - t, t], 1), np.stack([1 - t, s, t - s], 1))
        return ids, w

    def _delaunay_weights(self, pts):
        dl = self._dl
        simp = dl.find_simplex(pts, tol=1e-12)
        ids = np.zeros((len(pts), 3), dtype=np.int64)
        w = np.zeros((len(pts), 3))
        inside = simp >= 0
        if inside.any():
            s = simp[inside]
            T = dl.transform[s]
            b = np.einsum("ijk,ik->ij", T[:, :2], pts[inside] - T[:, 2])
            w[inside] = np.concatenate([b, 1 - b.sum(axis=1, keepdims=True)], axis=1)
            ids[inside] = dl.simplices[s]
        out = ~inside
        if out.any():
            P = self.grid.points
            a = P[self._hull_edges[:, 0]]
            d = P[self._hull_edges[:, 1]] - a
            q = pts[out]
            t = np.einsum("pej,ej->pe", q[:, None, :] - a[None], d) / np.sum(d * d, axis=1)
            t = np.clip(t, 0.0, 1.0)
            proj = a[None] + t[..., None] * d[None]
            dist = np.linalg.norm(q[:, None, :] - proj, axis=-1)
            k = np.argmin(dist, axis=1)
            tk = t[np.arange(len(q)), k]
            e = self._hull_edges[k]
            ids[out] = np.stack([e[:, 0], e[:, 1], e[:, 1]], 1)
            w[out] = np.stack([1 - tk, tk, np.zeros_like(tk)], 1)
        return ids, w


def p1_interpolate(field: NodalField, point) -> np.ndarray | float:
    """Piecewise-linear interpolant of ``field`` evaluated at ``point``."""
    pts = np.asarray(point, dtype=float)
    scalar = pts.ndim == 1
    ids, w = field.grid.triangulation.weights(pts)
    val = np.sum(field.values[ids] * w, axis=1)
    return float(val[0]) if scalar else val


# -- cells and cell masses ----------------------------------------------------


def _require_rect_cells(grid: Grid):
    if not grid.is_canonical:
        raise NotImplementedError("cell measures are implemented for the canonical basis")


def cell_measures(grid: Grid) -> np.ndarray:
    """|ω_x| for every node; the measures sum to |Ω|.

    Interior and lattice boundary nodes own their lattice cell clipped to the
    domain. Pieces of the domain inside cells of lattice points outside the
    closed domain go to the nearest boundary node.
    """
    _require_rect_cells(grid)
    h = grid.h
    dom = grid.domain
    meas = np.zeros(grid.n_nodes)
    lat = grid.on_lattice
    ids = np.flatnonzero(lat)
    meas[ids] = _clipped_cell_areas(dom, grid.points[ids], h)

    x0, x1, y0, y1 = dom.bbox
    i = np.arange(math.floor(x0 / h) - 1, math.ceil(x1 / h) + 2)
    j = np.arange(math.floor(y0 / h) - 1, math.ceil(y1 / h) + 2)
    I, J = np.meshgrid(i, j)
    Z = np.stack([I.ravel(), J.ravel()], 1)
    free = grid.node_at(Z) < 0
    C = h * Z[free].astype(float)
    near = (np.abs(C[:, 0] - np.clip(C[:, 0], x0, x1)) < h) & (np.abs(C[:, 1] - np.clip(C[:, 1], y0, y1)) < h)
    C = C[near]
    a = _clipped_cell_areas(dom, C, h)
    C, a = C[a > 0], a[a > 0]
    if len(C):
        bid = grid.n_interior + cKDTree(grid.boundary_points).query(C)[1]
        np.add.at(meas, bid, a)
    return meas


def _clipped_cell_areas(dom: ConvexDomain, centers: np.ndarray, h: float) -> np.ndarray:
    half = 0.5 * h
    corners = centers[:, None, :] + half * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    full = np.all(dom.level(corners) <= 0, axis=1)
    out = np.full(len(centers), h * h)
    part = ~full
    if part.any():
        c = centers[part]
        out[part] = dom.rect_area(c[:, 0] - half, c[:, 0] + half, c[:, 1] - half, c[:, 1] + half)
    return out


def cell_masses(grid: Grid, f, sub: int = 4, adaptive: bool = False,
                rtol: float = 1e-6, max_depth: int = 12) -> np.ndarray:
    """∫_{ω_x} f over the cells of the interior nodes.

    Composite midpoint rule with ``sub``×``sub`` sub-cells; sub-cells cut by a
    curved boundary are weighted by their clipped area and sampled at a point
    pulled back inside. With ``adaptive`` the full cells are refined until the
    relative change drops below ``rtol`` or ``max_depth`` halvings.
    """
    _require_rect_cells(grid)
    h = grid.h
    dom = grid.domain
    X = grid.interior_points
    half = 0.5 * h
    corners = X[:, None, :] + half * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    full = np.all(dom.level(corners) <= 0, axis=1)
    out = np.zeros(len(X))
    if adaptive:
        out[full] = _adaptive_masses(f, X[full], h, rtol, max_depth)
    else:
        out[full] = _midpoint(f, X[full], h, sub)
    for k in np.flatnonzero(~full):
        out[k] = _clipped_midpoint(dom, f, X[k], h, sub)
    return out


def _offsets(sub):
    o = (np.arange(sub) + 0.5) / sub - 0.5
    a, b = np.meshgrid(o, o)
    return np.stack([a.ravel(), b.ravel()], 1)


def _midpoint(f, centers, h, sub):
    if len(centers) == 0:
        return np.zeros(0)
    off = _offsets(sub) * h
    pts = centers[:, None, :] + off[None]
    vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(len(centers), -1)
    return vals.mean(axis=1) * h * h


def _clipped_midpoint(dom, f, center, h, sub):
    s = h / sub
    off = _offsets(sub) * h
    tot = 0.0
    for o in off:
        m = center + o
        a = float(dom.rect_area(m[0] - s / 2, m[0] + s / 2, m[1] - s / 2, m[1] + s / 2))
        if a <= 0:
            continue
        if dom.level(m) > 0:
            t = float(dom.exit_distance(center, m - center))
            m = center + 0.999 * t * (m - center)
        tot += a * float(np.asarray(f(m[None]))[0])
    return tot


def _adaptive_masses(f, centers, h, rtol, max_depth):
    n = len(centers)
    out = np.zeros(n)
    owner = np.arange(n)
    cen = centers.copy()
    size = h
    for depth in range(max_depth + 1):
        if len(cen) == 0:
            break
        coarse = _midpoint(f, cen, size, 2)
        fine = _midpoint(f, cen, size, 4)
        done = np.abs(fine - coarse) <= rtol * np.abs(fine) + 1e-300
        if depth == max_depth:
            done[:] = True
        np.add.at(out, owner[done], fine[done])
        cen, owner = cen[~done], owner[~done]
        q = 0.25 * size * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
        cen = (cen[:, None, :] + q[None]).reshape(-1, 2)
        owner = np.repeat(owner, 4)
        size *= 0.5
    return out
