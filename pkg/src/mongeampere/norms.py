"""Discrete error norms on nodal sets."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .grid import Grid, NodalField

NINE_POINT_DIRECTIONS = np.array([(1, 0), (0, 1), (1, 1), (1, -1)], dtype=np.int64)


class ErrorNorms(NamedTuple):
    linf: float
    w21: float
    h2: float
    h1: float
    excluded: int = 0


def _full_stencil_rows(grid: Grid) -> np.ndarray:
    rows = np.arange(grid.n_interior)
    ok = np.ones(len(rows), dtype=bool)
    for e in NINE_POINT_DIRECTIONS:
        ok &= grid.neighbor(rows, e) >= 0
        ok &= grid.neighbor(rows, -e) >= 0
    return rows[ok]


def second_differences(grid: Grid, values: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Normalized centered differences (rows, 4) along the nine-point directions."""
    out = np.empty((len(rows), len(NINE_POINT_DIRECTIONS)))
    for k, e in enumerate(NINE_POINT_DIRECTIONS):
        s = grid.step(e)
        out[:, k] = (values[grid.neighbor(rows, e)] - 2 * values[rows] + values[grid.neighbor(rows, -e)]) / (s @ s)
    return out


def error_norms(u_h: NodalField, problem, grid: Grid | None = None) -> ErrorNorms:
    """L∞, W^{2,1}_h, H²_h and H¹_h norms of u − u_h.

    The second-order norms sum over interior nodes whose nine-point stencil
    consists of nodes; the number of other interior nodes is ``excluded``.
    The H¹ norm uses backward differences at interior nodes.
    """
    grid = u_h.grid if grid is None else grid
    if problem.exact_u is None:
        raise ValueError(f"problem {problem.label!r} has no exact solution")
    err = problem.exact_u(grid.points) - u_h.values
    return error_norms_of(grid, err)


def error_norms_of(grid: Grid, err: np.ndarray) -> ErrorNorms:
    h = grid.h
    vol = h**2
    linf = float(np.abs(err).max())
    rows = _full_stencil_rows(grid)
    D = np.abs(second_differences(grid, err, rows))
    w21 = float(vol * D.sum())
    h2 = float(np.sqrt(vol * np.sum(D * D)))
    inter = np.arange(grid.n_interior)
    acc = err[inter] ** 2
    for e in ((1, 0), (0, 1)):
        back = grid.neighbor(inter, (-e[0], -e[1]))
        have = back >= 0
        d = np.zeros(len(inter))
        d[have] = (err[inter[have]] - err[back[have]]) / h
        acc = acc + d * d
    h1 = float(np.sqrt(vol * acc.sum()))
    return ErrorNorms(linf, w21, h2, h1, int(grid.n_interior - len(rows)))
