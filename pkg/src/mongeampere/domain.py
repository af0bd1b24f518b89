"""Convex computational domains: squares, disks and convex polygons.

All geometric queries are vectorized over the leading axes of the point
arrays. Points are stored with the last axis of length 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQUARE = "square"
DISK = "disk"
POLYGON = "polygon"


class DomainError(ValueError):
    """Raised for malformed domains or out-of-domain queries."""


@dataclass(frozen=True)
class ConvexDomain:
    """A bounded convex region of the plane.

    ``size`` is the half-width for squares and the radius for disks. Polygons
    carry their counterclockwise vertex list in ``vertices``.
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    size: float = 1.0
    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in (SQUARE, DISK, POLYGON):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == POLYGON:
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise DomainError("polygon needs at least three 2D vertices")
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross <= 0):
                raise DomainError("polygon vertices must be strictly convex and counterclockwise")
        elif self.size <= 0:
            raise DomainError("domain size must be positive")

    # -- descriptors -----------------------------------------------------

    @property
    def dim(self) -> int:
        return 2

    @property
    def _poly(self) -> np.ndarray:
        if self.kind == SQUARE:
            cx, cy = self.center
            a = self.size
            return np.array([[cx - a, cy - a], [cx + a, cy - a], [cx + a, cy + a], [cx - a, cy + a]])
        if self.kind == POLYGON:
            return np.asarray(self.vertices, dtype=float)
        raise DomainError("disk has no vertex list")

    def _halfplanes(self):
        """Unit outward normals n and offsets b with n·x <= b inside."""
        v = self._poly
        e = np.roll(v, -1, axis=0) - v
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        b = np.einsum("ij,ij->i", n, v)
        return n, b

    @property
    def area(self) -> float:
        if self.kind == DISK:
            return math.pi * self.size**2
        v = self._poly
        return 0.5 * float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    @property
    def centroid(self) -> np.ndarray:
        if self.kind != POLYGON:
            return np.asarray(self.center, dtype=float)
        v = self._poly
        w = np.roll(v, -1, axis=0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = 0.5 * cr.sum()
        return np.array([((v[:, 0] + w[:, 0]) * cr).sum(), ((v[:, 1] + w[:, 1]) * cr).sum()]) / (6 * a)

    @property
    def diameter(self) -> float:
        if self.kind == DISK:
            return 2.0 * self.size
        v = self._poly
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    @property
    def circumradius(self) -> float:
        """Largest distance from the centroid to a point of the domain."""
        if self.kind == DISK:
            return float(self.size)
        return float(np.max(np.linalg.norm(self._poly - self.centroid, axis=1)))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self.kind == DISK:
            cx, cy = self.center
            r = self.size
            return (cx - r, cx + r, cy - r, cy + r)
        v = self._poly
        return (v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())

    @property
    def tol(self) -> float:
        return 1e-12 * self.diameter

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == POLYGON:
            d["vertices"] = [list(map(float, p)) for p in self.vertices]
        else:
            d["center"] = [float(c) for c in self.center]
            d["half_width" if self.kind == SQUARE else "radius"] = float(self.size)
        return d

    # -- membership ------------------------------------------------------

    def level(self, x) -> np.ndarray:
        """Gauge-like level function: negative inside, zero on the boundary.

        For squares this is the max-norm distance to the boundary, for disks
        the Euclidean one, and for polygons the largest signed distance to an
        edge line.
        """
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if self.kind == SQUARE:
            return np.max(np.abs(x - c), axis=-1) - self.size
        if self.kind == DISK:
            return np.linalg.norm(x - c, axis=-1) - self.size
        n, b = self._halfplanes()
        return np.max(x @ n.T - b, axis=-1)

    def contains(self, x, tol: float | None = None) -> np.ndarray:
        """Closed-set membership. Square and disk tests are exact at tol=0."""
        if tol is None:
            tol = 0.0 if self.kind != POLYGON else self.tol
        return self.level(x) <= tol

    def on_boundary(self, x, tol: float | None = None) -> np.ndarray:
        if tol is None:
            tol = 1e-10 * self.diameter
        return np.abs(self.level(x)) <= tol

    # -- rays and chords -------------------------------------------------

    def chord(self, p, d):
        """Parameters (t_in, t_out) where the line p + t·d meets the boundary.

        Lines missing the domain return NaNs. Broadcasts over leading axes.
        """
        p = np.asarray(p, dtype=float)
        d = np.asarray(d, dtype=float)
        p, d = np.broadcast_arrays(p, d)
        c = np.asarray(self.center, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == DISK:
                q = p - c
                a = np.sum(d * d, axis=-1)
                b = np.sum(q * d, axis=-1)
                cc = np.sum(q * q, axis=-1) - self.size**2
                disc = b * b - a * cc
                s = np.sqrt(np.where(disc >= 0, disc, np.nan))
                return (-b - s) / a, (-b + s) / a
            n, off = self._halfplanes()
            nd = d @ n.T
            npv = p @ n.T
            t = (off - npv) / nd
            big = np.inf
            t_out = np.min(np.where(nd > 0, t, big), axis=-1)
            t_in = np.max(np.where(nd < 0, t, -big), axis=-1)
            # parallel edges: the line is either inside that slab or not at all
            outside = np.any((nd == 0) & (npv > off + self.tol), axis=-1)
            bad = outside | (t_in > t_out)
            return np.where(bad, np.nan, t_in), np.where(bad, np.nan, t_out)

    def exit_distance(self, x, w) -> np.ndarray:
        """Smallest t >= 0 with x + t·w on the boundary, for x in the closed domain."""
        x = np.asarray(x, dtype=float)
        if np.any(self.level(x) > 1e-9 * self.diameter):
            raise DomainError("exit_distance queried from a point outside the domain")
        _, t_out = self.chord(x, w)
        t = np.maximum(t_out, 0.0)
        # rounding can put x + t·w an ulp outside; back off until it is contained
        w = np.asarray(w, dtype=float)
        for _ in range(8):
            out = self.level(x + np.asarray(t)[..., None] * w) > (0.0 if self.kind != POLYGON else self.tol)
            if not np.any(out):
                break
            t = np.where(out, np.nextafter(t, 0.0), t)
        return t

    # -- areas -----------------------------------------------------------

    def rect_area(self, x0, x1, y0, y1) -> np.ndarray:
        """Area of [x0,x1]×[y0,y1] ∩ domain, vectorized over rectangles."""
        x0, x1, y0, y1 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x0, x1, y0, y1)))
        if self.kind == SQUARE:
            cx, cy = self.center
            a = self.size
            wx = np.clip(np.minimum(x1, cx + a) - np.maximum(x0, cx - a), 0, None)
            wy = np.clip(np.minimum(y1, cy + a) - np.maximum(y0, cy - a), 0, None)
            return wx * wy
        out = np.empty(x0.shape)
        flat = out.reshape(-1)
        args = [a.reshape(-1) for a in (x0, x1, y0, y1)]
        if self.kind == DISK:
            cx, cy = self.center
            for k in range(flat.size):
                flat[k] = _disk_rect_area(
                    self.size, args[0][k] - cx, args[1][k] - cx, args[2][k] - cy, args[3][k] - cy
                )
            return out
        n, b = self._halfplanes()
        for k in range(flat.size):
            rect = np.array(
                [[args[0][k], args[2][k]], [args[1][k], args[2][k]], [args[1][k], args[3][k]], [args[0][k], args[3][k]]]
            )
            flat[k] = polygon_area(clip_polygon(rect, n, b))
        return out


def square(center=(0.0, 0.0), half_width: float = 1.0) -> ConvexDomain:
    return ConvexDomain(SQUARE, (float(center[0]), float(center[1])), float(half_width))


def disk(center=(0.0, 0.0), radius: float = 1.0) -> ConvexDomain:
    return ConvexDomain(DISK, (float(center[0]), float(center[1])), float(radius))


def polygon(vertices) -> ConvexDomain:
    return ConvexDomain(POLYGON, vertices=tuple((float(a), float(b)) for a, b in vertices))


def domain_from_dict(d: dict) -> ConvexDomain:
    if d["kind"] == SQUARE:
        return square(d["center"], d["half_width"])
    if d["kind"] == DISK:
        return disk(d["center"], d["radius"])
    return polygon(d["vertices"])


# -- small polygon helpers shared with the grid module ------------------------


def clip_polygon(poly: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Clip a convex polygon by half-planes n·x <= b (Sutherland-Hodgman)."""
    pts = [tuple(p) for p in poly]
    for n, b in zip(normals, offsets):
        if not pts:
            break
        out = []
        m = len(pts)
        for i in range(m):
            p, q = np.asarray(pts[i]), np.asarray(pts[(i + 1) % m])
            sp, sq = n @ p - b, n @ q - b
            if sp <= 0:
                out.append(tuple(p))
            if (sp < 0 < sq) or (sq < 0 < sp):
                t = sp / (sp - sq)
                out.append(tuple(p + t * (q - p)))
        pts = out
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _disk_rect_area(r: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Exact area of a rectangle intersected with the centered disk of radius r."""
    a, b = max(x0, -r), min(x1, r)
    if a >= b or y0 >= y1:
        return 0.0

    def s(x):
        return math.sqrt(max(r * r - x * x, 0.0))

    def prim(x):  # antiderivative of s
        x = min(max(x, -r), r)
        return 0.5 * (x * s(x) + r * r * math.asin(x / r))

    cuts = {a, b}
    for y in (y0, y1):
        if abs(y) < r:
            xc = math.sqrt(r * r - y * y)
            for c in (-xc, xc):
                if a < c < b:
                    cuts.add(c)
    cuts = sorted(cuts)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sm = s(0.5 * (lo + hi))
        # upper = y1 or +s, lower = y0 or -s on this piece
        up_s = sm < y1
        lo_s = -sm > y0
        upper = sm if up_s else y1
        lower = -sm if lo_s else y0
        if upper <= lower:
            continue
        coef = int(up_s) + int(lo_s)
        const = (0.0 if up_s else y1) - (0.0 if lo_s else y0)
        total += const * (hi - lo) + coef * (prim(hi) - prim(lo))
    return total
