"""Manufactured Monge-Ampère test problems with closed-form solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import ConvexDomain, disk, square
from .grid import Grid, cell_masses


@dataclass(frozen=True)
class Problem:
    """det D²u = f in the domain, u = g on its boundary.

    ``point_masses`` lists (point, mass) pairs for measure-valued data; such
    problems are only solvable by the subdifferential-area scheme.
    """

    label: str
    domain: ConvexDomain
    f: Callable[[np.ndarray], np.ndarray] | None
    exact_u: Callable[[np.ndarray], np.ndarray] | None
    exact_grad: Callable[[np.ndarray], np.ndarray] | None = None
    point_masses: tuple = ()
    singular_density: bool = False
    g_func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def g(self, X) -> np.ndarray:
        fn = self.g_func if self.g_func is not None else self.exact_u
        return fn(np.asarray(X, dtype=float))

    def f_values(self, grid: Grid) -> np.ndarray:
        """Density at the interior nodes (zero for point-mass problems)."""
        if self.f is None:
            return np.zeros(grid.n_interior)
        return self.f(grid.interior_points)

    def f_max(self, grid: Grid) -> float:
        if self.f is None:
            return sum(m for _, m in self.point_masses) / grid.h**2
        return float(np.max(self.f(grid.points)))

    def masses(self, grid: Grid, sub: int = 4) -> np.ndarray:
        """Cell masses ∫_ω f at the interior nodes; point masses go to the nearest node."""
        if self.f is None:
            out = np.zeros(grid.n_interior)
            for p, m in self.point_masses:
                d = np.linalg.norm(grid.interior_points - np.asarray(p), axis=1)
                out[int(np.argmin(d))] += m
            return out
        return cell_masses(grid, self.f, sub=sub, adaptive=self.singular_density)[: grid.n_interior]

    def on(self, domain: ConvexDomain) -> "Problem":
        """Same data restricted to another domain."""
        return Problem(self.label, domain, self.f, self.exact_u, self.exact_grad, self.point_masses,
                       self.singular_density, self.g_func)


def _r2(X):
    return np.sum(X * X, axis=-1)


def ex1() -> Problem:
    def u(X):
        return np.exp(0.5 * _r2(X))

    def f(X):
        r2 = _r2(X)
        return (1 + r2) * np.exp(r2)

    def grad(X):
        return X * u(X)[..., None]

    return Problem("ex1", square(), f, u, grad)


def ex2() -> Problem:
    def u(X):
        r = np.sqrt(_r2(X))
        return np.where(r <= 0.5, 2 * r * r, 2 * (r - 0.5) ** 2 + 2 * r * r)

    def f(X):
        r = np.sqrt(_r2(X))
        with np.errstate(divide="ignore"):
            return np.where(r <= 0.5, 16.0, 64.0 - 16.0 / np.maximum(r, 0.5))

    def grad(X):
        r = np.sqrt(_r2(X))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r <= 0.5, 4.0, 8.0 - 2.0 / np.where(r > 0, r, 1.0))
        return X * s[..., None]

    return Problem("ex2", square(), f, u, grad)


def _ex3_branch(X):
    x1, x2 = np.abs(X[..., 0]), np.abs(X[..., 1])
    return x2 <= x1**3


def ex3() -> Problem:
    def u(X):
        x1, x2 = X[..., 0], X[..., 1]
        a2 = np.abs(x2)
        inner = _ex3_branch(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            u1 = x1**4 + 1.5 * x2**2 / np.where(x1 != 0, x1**2, 1.0)
        u2 = 0.5 * x1**2 * np.cbrt(a2) ** 2 + 2 * np.cbrt(a2) ** 4
        return np.where(inner, np.where(x1 != 0, u1, 0.0), u2)

    def f(X):
        x1, x2 = X[..., 0], X[..., 1]
        a2 = np.abs(x2)
        inner = _ex3_branch(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            f1 = 36 - 9 * x2**2 / np.where(x1 != 0, x1**6, 1.0)
            f2 = 8 / 9 - 5 / 9 * x1**2 / np.where(a2 > 0, np.cbrt(a2) ** 2, 1.0)
        return np.where(inner, np.where(x1 != 0, f1, 36.0), f2)

    return Problem("ex3", square(), f, u, None, singular_density=True)


def quad() -> Problem:
    return Problem("quad", square(), lambda X: np.ones(X.shape[:-1]), lambda X: 0.5 * _r2(X),
                   lambda X: np.array(X, dtype=float))


def cone() -> Problem:
    def u(X):
        return np.sqrt(_r2(X))

    return Problem("cone", disk(), None, u, None, point_masses=(((0.0, 0.0), math.pi),))


CATALOG = {"ex1": ex1, "ex2": ex2, "ex3": ex3, "quad": quad, "cone": cone}


def catalog() -> list[Problem]:
    return [make() for make in CATALOG.values()]


def get_problem(label: str) -> Problem:
    try:
        return CATALOG[label]()
    except KeyError:
        raise ValueError(f"unknown example {label!r}") from None
