"""Integer stencils and direction families for wide-stencil operators."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IntegerStencil:
    """Symmetric set of coprime integer vectors with max-norm at most ``width``."""

    vectors: np.ndarray
    width: int

    def __len__(self):
        return len(self.vectors)

    def half(self) -> np.ndarray:
        """One representative of each ±pair, taken in the upper half-plane."""
        v = self.vectors
        up = (v[:, 1] > 0) | ((v[:, 1] == 0) & (v[:, 0] > 0))
        h = v[up]
        return h[np.argsort(np.arctan2(h[:, 1], h[:, 0]), kind="stable")]

    def to_json(self) -> str:
        return json.dumps({"width": self.width, "vectors": self.vectors.tolist()})


@dataclass(frozen=True)
class OrthogonalBasisFamily:
    """Tuples (v, v⊥) of integer vectors; ``theta`` is the largest angular gap."""

    bases: np.ndarray  # (n, 2, 2)
    theta: float

    def __len__(self):
        return len(self.bases)

    def to_json(self) -> str:
        return json.dumps({"theta": self.theta, "bases": self.bases.tolist()})


@dataclass(frozen=True)
class UnitBasisFamily:
    """Rotated orthonormal frames covering all frames to radius ``theta``."""

    bases: np.ndarray  # (n, 2, 2) real unit vectors
    theta: float

    def __len__(self):
        return len(self.bases)

    def directions(self) -> np.ndarray:
        return self.bases.reshape(-1, 2)

    def to_json(self) -> str:
        return json.dumps({"theta": self.theta, "bases": self.bases.tolist()})


@dataclass(frozen=True)
class SuperbasisList:
    triples: np.ndarray  # (n, 3, 2)

    def __len__(self):
        return len(self.triples)

    def to_json(self) -> str:
        return json.dumps({"triples": self.triples.tolist()})


def coprime_stencil(W: int) -> IntegerStencil:
    """All e ≠ 0 with max-norm ≤ W and gcd(e) = 1, in lexicographic order."""
    if W < 1:
        raise ValueError("stencil width must be at least 1")
    vecs = [
        (a, b)
        for a in range(-W, W + 1)
        for b in range(-W, W + 1)
        if (a, b) != (0, 0) and math.gcd(a, b) == 1
    ]
    return IntegerStencil(np.array(vecs, dtype=np.int64), int(W))


def stencil_from_vectors(vectors) -> IntegerStencil:
    v = np.asarray(vectors, dtype=np.int64).reshape(-1, 2)
    width = int(np.abs(v).max()) if len(v) else 0
    return IntegerStencil(v, width)


def _perp(v):
    return np.array([-v[1], v[0]], dtype=np.int64)


def _max_gap(angles: np.ndarray) -> float:
    a = np.sort(np.mod(angles, math.pi))
    gaps = np.diff(np.concatenate([a, [a[0] + math.pi]]))
    return float(gaps.max())


def orthogonal_bases(S: IntegerStencil) -> OrthogonalBasisFamily:
    """One tuple (v, v⊥) per upper-half-plane direction v of S with v⊥ ∈ S.

    The canonical pair comes first, so ties in min-over-bases favour it.
    """
    if len(S) == 0:
        raise ValueError("empty stencil")
    members = {tuple(v) for v in S.vectors.tolist()}
    out = []
    for v in S.half():
        p = _perp(v)
        if tuple(p) in members:
            out.append(np.stack([v, p]))
    if not out:
        raise ValueError("stencil contains no orthogonal pair")
    ang = np.arctan2(S.half()[:, 1], S.half()[:, 0])
    return OrthogonalBasisFamily(np.array(out, dtype=np.int64), _max_gap(ang))


def rotated_bases(theta: float) -> UnitBasisFamily:
    """N = ceil(π / (4·arcsin(θ/2))) frames rotated by kπ/(2N)."""
    if not (0 < theta <= math.pi / 4 + 1e-15):
        raise ValueError("theta must lie in (0, π/4]")
    n = math.ceil(math.pi / (4 * math.asin(theta / 2)) - 1e-12)
    phi = np.arange(n) * math.pi / (2 * n)
    c, s = np.cos(phi), np.sin(phi)
    bases = np.stack([np.stack([c, s], 1), np.stack([-s, c], 1)], 1)
    return UnitBasisFamily(bases, float(theta))


def superbases(S: IntegerStencil) -> SuperbasisList:
    """Triples in S summing to zero with |det(e₁,e₂)| = 1, up to order and sign."""
    vecs = [tuple(v) for v in S.vectors.tolist()]
    members = set(vecs)
    seen = set()
    out = []
    for e1 in vecs:
        for e2 in vecs:
            if abs(e1[0] * e2[1] - e1[1] * e2[0]) != 1:
                continue
            e0 = (-e1[0] - e2[0], -e1[1] - e2[1])
            if e0 not in members:
                continue
            key = _canonical_triple((e0, e1, e2))
            if key not in seen:
                seen.add(key)
                out.append(key)
    return SuperbasisList(np.array(out, dtype=np.int64).reshape(-1, 3, 2))


def _canonical_triple(t):
    a = tuple(sorted(t))
    b = tuple(sorted(tuple(-c for c in v) for v in t))
    return min(a, b)


def is_M_obtuse(triple, M) -> bool:
    """True iff e_j·M e_i ≤ 0 for all pairs of the superbasis."""
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2) or not np.allclose(M, M.T, rtol=0, atol=1e-14 * max(1.0, np.abs(M).max())):
        raise ValueError("M must be a symmetric 2x2 matrix")
    if np.any(np.linalg.eigvalsh(M) <= 0):
        raise ValueError("M must be positive definite")
    t = np.asarray(triple, dtype=float)
    if t.shape != (3, 2) or np.any(t.sum(axis=0) != 0) or abs(round(np.linalg.det(t[1:]))) != 1:
        raise ValueError("not a superbasis")
    tol = 1e-12 * np.linalg.norm(M, 2)
    G = t @ M @ t.T
    return bool(G[0, 1] <= tol and G[0, 2] <= tol and G[1, 2] <= tol)


def voronoi_vectors(M, bound: int | None = None) -> np.ndarray:
    """Strict Voronoi-relevant vectors of Z² for the metric M (brute force).

    e is relevant iff ±e are the unique shortest vectors of the coset e + 2Z².
    """
    M = np.asarray(M, dtype=float)
    if bound is None:
        lam = np.linalg.eigvalsh(M)
        bound = int(math.ceil(2 * math.sqrt(lam[1] / lam[0]))) + 2
    r = np.arange(-2 * bound, 2 * bound + 1)
    A, B = np.meshgrid(r, r)
    Z = np.stack([A.ravel(), B.ravel()], 1)
    Z = Z[np.any(Z != 0, axis=1)]
    q = np.einsum("ij,jk,ik->i", Z, M, Z)
    out = []
    for cls in [(1, 0), (0, 1), (1, 1)]:
        sel = (np.mod(Z[:, 0], 2) == cls[0]) & (np.mod(Z[:, 1], 2) == cls[1])
        qs, zs = q[sel], Z[sel]
        m = qs.min()
        best = zs[qs <= m * (1 + 1e-12)]
        if len(best) == 2:
            out.extend(best.tolist())
    return np.array(sorted(out), dtype=np.int64)
