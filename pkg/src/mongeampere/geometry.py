"""Convex envelopes of nodal functions and their subdifferentials.

The envelope Γ(w) of a nodal function is the lower convex hull of the lifted
points (x, w(x)). Its projection is a triangulation of the convex hull of the
nodes, with one constant gradient per triangle; the subdifferential of Γ at a
node is the convex hull of the gradients of the triangles touching it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import ConvexHull

from .grid import Grid, NodalField


class GeometryError(ValueError):
    """Degenerate input for hull computations."""


@dataclass
class SubdifferentialPolygon:
    """Convex polygon in gradient space (counterclockwise vertices)."""

    vertices: np.ndarray
    area: float
    on_envelope: bool = True


@dataclass
class EnvelopeMesh:
    """Triangulation induced by the convex envelope of a nodal function.

    ``envelope`` holds Γ(w) at every node and ``on_envelope`` marks the nodes
    where Γ(w) equals w.
    """

    points: np.ndarray
    values: np.ndarray
    triangles: np.ndarray
    gradients: np.ndarray
    envelope: np.ndarray
    on_envelope: np.ndarray
    interior: np.ndarray

    def triangles_at(self, nodes) -> tuple[np.ndarray, np.ndarray]:
        """Pairs (node, triangle) with the node in the closed triangle."""
        return _locate(self.points, self.triangles, self.points[np.asarray(nodes)], np.asarray(nodes))

    def to_off(self) -> str:
        buf = io.StringIO()
        buf.write("OFF\n")
        buf.write(f"{len(self.points)} {len(self.triangles)} 0\n")
        for (x, y), z in zip(self.points, self.envelope):
            buf.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in self.triangles:
            buf.write(f"3 {a} {b} {c}\n")
        return buf.getvalue()


def _as_points(field) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(field, NodalField):
        g: Grid = field.grid
        interior = np.zeros(g.n_nodes, dtype=bool)
        interior[: g.n_interior] = True
        return np.asarray(g.points, dtype=float), np.asarray(field.values, dtype=float), interior
    pts, vals = field
    return np.asarray(pts, dtype=float), np.asarray(vals, dtype=float), None


def _hull_interior(pts: np.ndarray) -> np.ndarray:
    """Points strictly inside the 2D convex hull of the set."""
    hull = ConvexHull(pts)
    eq = hull.equations
    scale = np.ptp(pts, axis=0).max()
    return np.all(pts @ eq[:, :2].T + eq[:, 2] < -1e-12 * scale, axis=1)


def lower_convex_hull(field) -> EnvelopeMesh:
    """Convex envelope of a nodal function.

    ``field`` is a :class:`NodalField` or a pair (points, values). Coplanar
    lifted points are left to qhull's triangulated output; nodes that are not
    hull vertices are located in the triangulation and evaluated there.
    """
    pts, vals, interior = _as_points(field)
    n = len(pts)
    if n < 3:
        raise GeometryError("need at least three nodes")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12 * max(np.abs(centered).max(), 1e-300)) < 2:
        raise GeometryError("all nodes are collinear")
    if interior is None:
        interior = _hull_interior(pts)
    L = float(np.ptp(pts, axis=0).max())
    m = float(vals.mean())
    s = float(np.abs(vals - m).max()) or 1.0
    z = (vals - m) / s * L
    # an apex far above keeps the lifted set full-dimensional even for affine data
    apex = np.concatenate([pts.mean(axis=0), [z.max() + 10 * L]])
    lifted = np.vstack([np.column_stack([pts, z]), apex])
    hull = ConvexHull(lifted, qhull_options="Qt")
    eq = hull.equations
    lower = eq[:, 2] < -1e-10
    tris = hull.simplices[lower]
    tris = tris[np.all(tris < n, axis=1)].astype(np.int64)
    P = pts[tris]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = np.abs(det) > 1e-12 * L * L
    tris, e1, e2, det = tris[keep], e1[keep], e2[keep], det[keep]
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    e1[flip], e2[flip] = e2[flip].copy(), e1[flip].copy()
    det = np.abs(det)
    dz1 = vals[tris[:, 1]] - vals[tris[:, 0]]
    dz2 = vals[tris[:, 2]] - vals[tris[:, 0]]
    grads = np.column_stack([(dz1 * e2[:, 1] - dz2 * e1[:, 1]) / det, (dz2 * e1[:, 0] - dz1 * e2[:, 0]) / det])

    env = np.array(vals, copy=True)
    is_vertex = np.zeros(n, dtype=bool)
    is_vertex[tris.ravel()] = True
    others = np.flatnonzero(~is_vertex)
    if len(others):
        q, t = _locate(pts, tris, pts[others], others)
        plane = vals[tris[t, 0]] + np.einsum("ij,ij->i", grads[t], pts[q] - pts[tris[t, 0]])
        best = np.full(n, np.nan)
        np.fmax.at(best, q, plane)
        env[others] = np.where(np.isnan(best[others]), vals[others], np.minimum(best[others], vals[others]))
    tol = 1e-12 * max(float(np.abs(vals).max()), 1.0)
    on = np.abs(env - vals) <= tol
    return EnvelopeMesh(pts, vals, tris, grads, env, on, interior)


# -- point location -----------------------------------------------------------


def _locate(pts, tris, queries, qids, btol: float = 1e-9):
    """All (query id, triangle) pairs with the query point in the closed triangle.

    Triangles are bucketed on a uniform grid by bounding box.
    """
    queries = np.atleast_2d(queries)
    T = pts[tris]
    lo = T.min(axis=1)
    hi = T.max(axis=1)
    x0 = pts.min(axis=0)
    span = np.ptp(pts, axis=0).max()
    nb = int(max(1, min(2048, np.sqrt(len(tris)))))
    cs = span / nb * (1 + 1e-9)
    pad = 1e-9 * span
    c0 = np.floor((lo - pad - x0) / cs).astype(np.int64).clip(0, nb - 1)
    c1 = np.floor((hi + pad - x0) / cs).astype(np.int64).clip(0, nb - 1)
    cell_ids, tri_ids = _bucket(c0, c1, nb)
    order = np.argsort(cell_ids, kind="stable")
    cell_ids, tri_ids = cell_ids[order], tri_ids[order]
    starts = np.searchsorted(cell_ids, np.arange(nb * nb + 1))
    qc = np.floor((queries - x0) / cs).astype(np.int64).clip(0, nb - 1)
    qcell = qc[:, 0] * nb + qc[:, 1]
    cnt = starts[qcell + 1] - starts[qcell]
    qi = np.repeat(np.arange(len(queries)), cnt)
    off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ti = tri_ids[starts[qcell][qi] + off]
    a, b, c = T[ti, 0], T[ti, 1], T[ti, 2]
    p = queries[qi]
    v0, v1, v2 = b - a, c - a, p - a
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
    l0 = 1 - l1 - l2
    ok = (l0 >= -btol) & (l1 >= -btol) & (l2 >= -btol)
    return np.asarray(qids)[qi[ok]], ti[ok]


@njit(cache=True)
def _bucket_count(c0, c1):
    tot = 0
    for t in range(c0.shape[0]):
        tot += (c1[t, 0] - c0[t, 0] + 1) * (c1[t, 1] - c0[t, 1] + 1)
    return tot


@njit(cache=True)
def _bucket_fill(c0, c1, nb, cells, ids):
    k = 0
    for t in range(c0.shape[0]):
        for i in range(c0[t, 0], c1[t, 0] + 1):
            for j in range(c0[t, 1], c1[t, 1] + 1):
                cells[k] = i * nb + j
                ids[k] = t
                k += 1


def _bucket(c0, c1, nb):
    tot = _bucket_count(c0, c1)
    cells = np.empty(tot, dtype=np.int64)
    ids = np.empty(tot, dtype=np.int64)
    _bucket_fill(c0, c1, nb, cells, ids)
    return cells, ids


# -- subdifferentials ---------------------------------------------------------


@njit(cache=True)
def _hull_area_groups(gx, gy, starts, out_area):
    """Shoelace area of the convex hull of each point group (monotone chain)."""
    for g in range(starts.shape[0] - 1):
        a, b = starts[g], starts[g + 1]
        m = b - a
        if m < 3:
            out_area[g] = 0.0
            continue
        order = np.argsort(gx[a:b] + 1e-300 * gy[a:b])
        xs = gx[a:b][order]
        ys = gy[a:b][order]
        # sort by (x, y)
        for i in range(1, m):
            j = i
            while j > 0 and xs[j - 1] == xs[j] and ys[j - 1] > ys[j]:
                xs[j - 1], xs[j] = xs[j], xs[j - 1]
                ys[j - 1], ys[j] = ys[j], ys[j - 1]
                j -= 1
        hx = np.empty(2 * m)
        hy = np.empty(2 * m)
        k = 0
        for i in range(m):
            while k >= 2 and (hx[k - 1] - hx[k - 2]) * (ys[i] - hy[k - 2]) - (hy[k - 1] - hy[k - 2]) * (xs[i] - hx[k - 2]) <= 0:
                k -= 1
            hx[k], hy[k] = xs[i], ys[i]
            k += 1
        t = k + 1
        for i in range(m - 2, -1, -1):
            while k >= t and (hx[k - 1] - hx[k - 2]) * (ys[i] - hy[k - 2]) - (hy[k - 1] - hy[k - 2]) * (xs[i] - hx[k - 2]) <= 0:
                k -= 1
            hx[k], hy[k] = xs[i], ys[i]
            k += 1
        area = 0.0
        for i in range(k - 1):
            area += hx[i] * hy[i + 1] - hx[i + 1] * hy[i]
        out_area[g] = 0.5 * area


def _convex_hull_2d(P: np.ndarray) -> np.ndarray:
    """Counterclockwise hull vertices of a small point set."""
    pts = sorted(set(map(tuple, np.round(P, 15).tolist())))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)


def _shoelace(V: np.ndarray) -> float:
    if len(V) < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def subdifferential_polygon(env: EnvelopeMesh, node: int) -> SubdifferentialPolygon:
    """∂Γ(w) at a node: hull of the gradients of the triangles touching it."""
    if not env.on_envelope[node]:
        return SubdifferentialPolygon(np.zeros((0, 2)), 0.0, on_envelope=False)
    _, t = env.triangles_at([node])
    V = _convex_hull_2d(env.gradients[t])
    return SubdifferentialPolygon(V, _shoelace(V))


def subdifferential_areas(env: EnvelopeMesh, nodes=None) -> np.ndarray:
    """|∂Γ(w)(x)| for many nodes; zero at nodes off the envelope."""
    if nodes is None:
        nodes = np.flatnonzero(env.interior)
    nodes = np.asarray(nodes, dtype=np.int64)
    q, t = env.triangles_at(nodes)
    pos = np.searchsorted(nodes, q) if np.all(np.diff(nodes) > 0) else _positions(nodes, q)
    order = np.argsort(pos, kind="stable")
    pos, t = pos[order], t[order]
    starts = np.searchsorted(pos, np.arange(len(nodes) + 1))
    G = env.gradients[t]
    area = np.zeros(len(nodes))
    _hull_area_groups(np.ascontiguousarray(G[:, 0]), np.ascontiguousarray(G[:, 1]), starts, area)
    return np.where(env.on_envelope[nodes], area, 0.0)


def _positions(nodes, q):
    lookup = {int(v): i for i, v in enumerate(nodes)}
    return np.array([lookup[int(v)] for v in q], dtype=np.int64)


def is_nodally_convex(field) -> bool:
    """True iff the envelope matches the field at every interior node."""
    env = lower_convex_hull(field)
    return bool(np.all(env.on_envelope[env.interior]))


def op_residual(field: NodalField, masses) -> np.ndarray:
    """|∂Γ(u)(x)| − f_x over interior nodes."""
    env = lower_convex_hull(field)
    nodes = np.arange(field.grid.n_interior)
    return subdifferential_areas(env, nodes) - np.asarray(masses, dtype=float)


def contact_set(diff: NodalField) -> np.ndarray:
    """Interior nodes where the envelope of ``diff`` touches it."""
    env = lower_convex_hull(diff)
    return np.flatnonzero(env.on_envelope & env.interior)


def alexandrov_bound_check(w: NodalField) -> tuple[float, float]:
    """(sup w⁻, (Σ over the contact set of |∂Γw|)^{1/2}) for w >= 0 on the boundary."""
    g = w.grid
    if np.any(w.boundary < -1e-12 * max(1.0, float(np.abs(w.values).max()))):
        raise GeometryError("boundary values must be nonnegative")
    lhs = float(max(0.0, -w.values.min()))
    env = lower_convex_hull(w)
    nodes = np.flatnonzero(env.on_envelope[: g.n_interior])
    total = float(subdifferential_areas(env, nodes).sum()) if len(nodes) else 0.0
    return lhs, total ** (1 / 2)


def convexify(field: NodalField) -> NodalField:
    """Replace nodal values by the envelope; the result is nodally convex."""
    env = lower_convex_hull(field)
    return NodalField(field.grid, np.minimum(env.envelope, field.values))
