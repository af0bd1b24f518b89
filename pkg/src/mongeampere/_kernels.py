"""Compiled per-node kernels shared by every operator and solver.

An operator is described by a *program*: for each row (an interior node) a
fixed number of slots, each slot being an affine functional of the nodal
values,

    d[k] = cc[k]·u[node] + Σ_m cf[k, m]·u[idx[k, m]] + cst[k],

followed by a node-local nonlinearity selected by ``kind``. Keeping the
nonlinearity scalar-per-node lets the same code drive vectorized evaluation,
Jacobian assembly and per-node bisection.
"""

from __future__ import annotations

import numpy as np
from numba import njit

WS = 0
WS_VARIANT = 1
WS_REG = 2
FD9 = 3
FILTERED = 4
LBR = 5
PD = 6
OP = 7
CE = 8
FILTERED_MONO = 9  # filtered value, Jacobian with the filter slope clipped at 0
WS_NEWTON = 10  # WS value, Jacobian with the right derivative of t⁺ at nonpositive factors


@njit(cache=True)
def _pos(x):
    return x if x > 0.0 else 0.0


@njit(cache=True)
def _smin(a, b, dl):
    return 0.5 * (a + b - np.sqrt((a - b) ** 2 + dl * dl))


@njit(cache=True)
def _smax(a, b, dl):
    return 0.5 * (a + b + np.sqrt((a - b) ** 2 + dl * dl))


@njit(cache=True)
def filter_value(t):
    a = abs(t)
    if a <= 1.0:
        return t
    if a >= 2.0:
        return 0.0
    return 2.0 - t if t > 0 else -t - 2.0


@njit(cache=True)
def filter_slope(t):
    a = abs(t)
    if a <= 1.0:
        return 1.0
    if a >= 2.0:
        return 0.0
    return -1.0


@njit(cache=True)
def lbr_gamma(d0, d1, d2):
    if d0 >= d1 + d2:
        return d1 * d2
    if d1 >= d2 + d0:
        return d2 * d0
    if d2 >= d0 + d1:
        return d0 * d1
    return 0.5 * (d0 * d1 + d1 * d2 + d0 * d2) - 0.25 * (d0 * d0 + d1 * d1 + d2 * d2)


@njit(cache=True)
def _lbr_grad(d0, d1, d2, out):
    if d0 >= d1 + d2:
        out[0], out[1], out[2] = 0.0, d2, d1
    elif d1 >= d2 + d0:
        out[0], out[1], out[2] = d2, 0.0, d0
    elif d2 >= d0 + d1:
        out[0], out[1], out[2] = d1, d0, 0.0
    else:
        out[0] = 0.5 * (d1 + d2 - d0)
        out[1] = 0.5 * (d0 + d2 - d1)
        out[2] = 0.5 * (d0 + d1 - d2)


@njit(cache=True)
def polygon_area(ax, ay, b, sym, want_grad, grad):
    """Area of {p : a_j·p <= b_j} (and -a_j·p <= b_j when ``sym``).

    Returns (area, unbounded). The gradient with respect to b_j is the length
    of the polygon edge on line j divided by |a_j|.
    """
    m = ax.shape[0]
    if want_grad:
        for j in range(m):
            grad[j] = 0.0
    amin = np.inf
    bmax = 0.0
    for j in range(m):
        na = np.sqrt(ax[j] ** 2 + ay[j] ** 2)
        if na > 0:
            amin = min(amin, na)
            bmax = max(bmax, abs(b[j]))
    if amin == np.inf:
        return np.inf, True
    R = 10.0 * bmax / amin + 1.0
    cap = 2 * (2 * m + 4) + 8
    px = np.empty(cap)
    py = np.empty(cap)
    lab = np.empty(cap, dtype=np.int64)
    qx = np.empty(cap)
    qy = np.empty(cap)
    qlab = np.empty(cap, dtype=np.int64)
    px[0], py[0] = -R, -R
    px[1], py[1] = R, -R
    px[2], py[2] = R, R
    px[3], py[3] = -R, R
    for i in range(4):
        lab[i] = -1
    n = 4
    passes = 2 if sym else 1
    for j in range(m):
        if ax[j] == 0.0 and ay[j] == 0.0:
            continue
        for side in range(passes):
            sg = 1.0 if side == 0 else -1.0
            cx, cy, cb = sg * ax[j], sg * ay[j], b[j]
            k = 0
            for i in range(n):
                i2 = i + 1 if i + 1 < n else 0
                si = cx * px[i] + cy * py[i] - cb
                s2 = cx * px[i2] + cy * py[i2] - cb
                if si <= 0.0:
                    qx[k], qy[k], qlab[k] = px[i], py[i], lab[i]
                    k += 1
                    if s2 > 0.0:
                        t = si / (si - s2)
                        qx[k] = px[i] + t * (px[i2] - px[i])
                        qy[k] = py[i] + t * (py[i2] - py[i])
                        qlab[k] = j
                        k += 1
                elif s2 <= 0.0:
                    t = si / (si - s2)
                    qx[k] = px[i] + t * (px[i2] - px[i])
                    qy[k] = py[i] + t * (py[i2] - py[i])
                    qlab[k] = lab[i]
                    k += 1
            n = k
            for i in range(n):
                px[i], py[i], lab[i] = qx[i], qy[i], qlab[i]
            if n == 0:
                return 0.0, False
    area = 0.0
    unbounded = False
    for i in range(n):
        i2 = i + 1 if i + 1 < n else 0
        area += px[i] * py[i2] - px[i2] * py[i]
        L = np.sqrt((px[i2] - px[i]) ** 2 + (py[i2] - py[i]) ** 2)
        if lab[i] < 0:
            if L > 0:
                unbounded = True
        elif want_grad:
            grad[lab[i]] += L / np.sqrt(ax[lab[i]] ** 2 + ay[lab[i]] ** 2)
    area *= 0.5
    if area < 0.0:
        area = 0.0
    return area, unbounded


@njit(cache=True)
def node_eval(kind, d, valid, groups, ax, ay, p0, nws, want_grad, grad, work):
    """Operator value at one node from its slot values ``d``.

    Returns (value, argmin). ``grad`` receives ∂value/∂d when requested.
    ``work`` is scratch of length >= len(d).
    """
    K = d.shape[0]
    if want_grad:
        for k in range(K):
            grad[k] = 0.0
    if kind == WS or kind == WS_VARIANT or kind == FILTERED or kind == FILTERED_MONO or kind == WS_NEWTON:
        best = np.inf
        arg = -1
        G = groups.shape[0]
        for g in range(G):
            a = d[groups[g, 0]]
            b = d[groups[g, 1]]
            v = _pos(a) * _pos(b)
            if kind == WS_VARIANT:
                v -= _pos(-a) + _pos(-b)
            if v < best:
                best = v
                arg = g
        if want_grad:
            a = d[groups[arg, 0]]
            b = d[groups[arg, 1]]
            ga = 0.0
            gb = 0.0
            if a > 0 and b > 0:
                ga, gb = b, a
            elif kind == WS_NEWTON or kind == FILTERED_MONO:
                # right derivative of t⁺ at 0 keeps degenerate rows nonsingular
                ga = b if b > 0 else (1.0 if a <= 0 else 0.0)
                gb = a if a > 0 else (1.0 if b <= 0 else 0.0)
            if kind == WS_VARIANT:
                if a < 0:
                    ga = 1.0
                if b < 0:
                    gb = 1.0
            grad[groups[arg, 0]] += ga
            grad[groups[arg, 1]] += gb
        if kind != FILTERED and kind != FILTERED_MONO:
            return best, arg
        ws = best
        f0 = d[nws]
        f1 = d[nws + 1]
        f2 = d[nws + 2]
        fd = f0 * f1 - f2 * f2
        t = (fd - ws) / p0
        val = ws + p0 * filter_value(t)
        if want_grad:
            s = filter_slope(t)
            if kind == FILTERED_MONO and s < 0:
                s = 0.0
            for k in range(nws):
                grad[k] *= 1.0 - s
            grad[nws] = s * f1
            grad[nws + 1] = s * f0
            grad[nws + 2] = -2.0 * s * f2
        return val, arg
    if kind == WS_REG:
        G = groups.shape[0]
        # forward fold of the smoothed min, keeping the partial values
        for g in range(G):
            a = d[groups[g, 0]]
            b = d[groups[g, 1]]
            work[g] = _smax(a, 0.0, p0) * _smax(b, 0.0, p0)
        m = work[0]
        arg = 0
        best = work[0]
        for g in range(1, G):
            if work[g] < best:
                best = work[g]
                arg = g
            m = _smin(m, work[g], p0)
        if want_grad:
            # backward pass: weight of each product in the folded min
            w = 1.0
            mm = np.empty(G)
            mm[0] = work[0]
            for g in range(1, G):
                mm[g] = _smin(mm[g - 1], work[g], p0)
            for g in range(G - 1, -1, -1):
                if g > 0:
                    a = mm[g - 1]
                    b = work[g]
                    r = (a - b) / np.sqrt((a - b) ** 2 + p0 * p0) if (a != b or p0 > 0) else 0.0
                    wb = w * 0.5 * (1.0 + r)
                    wa = w * 0.5 * (1.0 - r)
                else:
                    wb = w
                    wa = 0.0
                ia = groups[g, 0]
                ib = groups[g, 1]
                sa = _smax(d[ia], 0.0, p0)
                sb = _smax(d[ib], 0.0, p0)
                da = 0.5 * (1.0 + d[ia] / np.sqrt(d[ia] ** 2 + p0 * p0)) if (d[ia] != 0 or p0 > 0) else 0.5
                db = 0.5 * (1.0 + d[ib] / np.sqrt(d[ib] ** 2 + p0 * p0)) if (d[ib] != 0 or p0 > 0) else 0.5
                grad[ia] += wb * da * sb
                grad[ib] += wb * sa * db
                w = wa
        return m, arg
    if kind == FD9:
        if want_grad:
            grad[0] = d[1]
            grad[1] = d[0]
            grad[2] = -2.0 * d[2]
        return d[0] * d[1] - d[2] * d[2], -1
    if kind == LBR:
        best = np.inf
        arg = -1
        for g in range(groups.shape[0]):
            v = lbr_gamma(_pos(d[groups[g, 0]]), _pos(d[groups[g, 1]]), _pos(d[groups[g, 2]]))
            if v < best:
                best = v
                arg = g
        if want_grad:
            tmp = np.empty(3)
            _lbr_grad(_pos(d[groups[arg, 0]]), _pos(d[groups[arg, 1]]), _pos(d[groups[arg, 2]]), tmp)
            for q in range(3):
                if d[groups[arg, q]] > 0:
                    grad[groups[arg, q]] += tmp[q]
        return best, arg
    if kind == PD or kind == OP:
        n = 0
        for k in range(K):
            if valid[k]:
                n += 1
        bx = np.empty(n)
        by = np.empty(n)
        bb = np.empty(n)
        gg = np.empty(n)
        q = 0
        for k in range(K):
            if valid[k]:
                bx[q] = ax[k]
                by[q] = ay[k]
                bb[q] = d[k]
                q += 1
        area, unb = polygon_area(bx, by, bb, kind == PD, want_grad, gg)
        if want_grad:
            q = 0
            for k in range(K):
                if valid[k]:
                    grad[k] = gg[q]
                    q += 1
        return area, 1 if unb else 0
    if kind == CE:
        best = np.inf
        arg = -1
        for k in range(K):
            if valid[k] and d[k] < best:
                best = d[k]
                arg = k
        if want_grad:
            grad[arg] = 1.0
        return best, arg
    return np.nan, -1


@njit(cache=True)
def _slots(u, r, i, cc, idx, cf, cst, d):
    K = cc.shape[1]
    M = idx.shape[2]
    for k in range(K):
        s = cst[r, k] + cc[r, k] * u[i]
        for m in range(M):
            j = idx[r, k, m]
            if j >= 0:
                s += cf[r, k, m] * u[j]
        d[k] = s


@njit(cache=True)
def evaluate(kind, u, rows, cc, idx, cf, cst, valid, groups, A, p0, nws):
    n = rows.shape[0]
    K = cc.shape[1]
    vals = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    d = np.empty(K)
    grad = np.empty(K)
    work = np.empty(max(K, groups.shape[0]) + 1)
    for r in range(n):
        _slots(u, r, rows[r], cc, idx, cf, cst, d)
        v, a = node_eval(kind, d, valid[r], groups, A[r, :, 0], A[r, :, 1], p0, nws, False, grad, work)
        vals[r] = v
        arg[r] = a
    return vals, arg


@njit(cache=True)
def slot_values(u, rows, cc, idx, cf, cst):
    n = rows.shape[0]
    K = cc.shape[1]
    out = np.empty((n, K))
    d = np.empty(K)
    for r in range(n):
        _slots(u, r, rows[r], cc, idx, cf, cst, d)
        out[r] = d
    return out


@njit(cache=True)
def linearize(kind, u, rows, cc, idx, cf, cst, valid, groups, A, p0, nws):
    """Values plus the Jacobian in COO form (row, node column, value)."""
    n = rows.shape[0]
    K = cc.shape[1]
    M = idx.shape[2]
    vals = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    cap = n * K * (M + 1)
    ri = np.empty(cap, dtype=np.int64)
    ci = np.empty(cap, dtype=np.int64)
    vv = np.empty(cap)
    d = np.empty(K)
    grad = np.empty(K)
    work = np.empty(max(K, groups.shape[0]) + 1)
    c = 0
    for r in range(n):
        i = rows[r]
        _slots(u, r, i, cc, idx, cf, cst, d)
        v, a = node_eval(kind, d, valid[r], groups, A[r, :, 0], A[r, :, 1], p0, nws, True, grad, work)
        vals[r] = v
        arg[r] = a
        for k in range(K):
            gk = grad[k]
            if gk == 0.0:
                continue
            ri[c] = r
            ci[c] = i
            vv[c] = gk * cc[r, k]
            c += 1
            for m in range(M):
                j = idx[r, k, m]
                if j >= 0 and cf[r, k, m] != 0.0:
                    ri[c] = r
                    ci[c] = j
                    vv[c] = gk * cf[r, k, m]
                    c += 1
    return vals, arg, ri[:c], ci[:c], vv[:c]


@njit(cache=True)
def _residual_at(kind, t, base, cc_r, valid_r, groups, ax, ay, p0, nws, rhs, d, grad, work):
    for k in range(base.shape[0]):
        d[k] = base[k] + cc_r[k] * t
    v, a = node_eval(kind, d, valid_r, groups, ax, ay, p0, nws, False, grad, work)
    return v - rhs


@njit(cache=True)
def gauss_seidel_sweep(kind, u, rows, order, rhs, cc, idx, cf, cst, valid, groups, A, p0, nws,
                       tol_local, step0):
    """One nonlinear Gauss-Seidel sweep in ``order`` (indices into rows).

    Each node solves value(u_i) = rhs by doubling a bracket from the current
    value and bisecting. Returns (max |residual| before updates, failed row).
    A failed row (>= 0) means no bracket was found within 60 doublings.
    """
    K = cc.shape[1]
    M = idx.shape[2]
    base = np.empty(K)
    d = np.empty(K)
    grad = np.empty(K)
    work = np.empty(max(K, groups.shape[0]) + 1)
    worst = 0.0
    for q in range(order.shape[0]):
        r = order[q]
        i = rows[r]
        for k in range(K):
            s = cst[r, k]
            for m in range(M):
                j = idx[r, k, m]
                if j >= 0:
                    s += cf[r, k, m] * u[j]
            base[k] = s
        ax = A[r, :, 0]
        ay = A[r, :, 1]
        t0 = u[i]
        F0 = _residual_at(kind, t0, base, cc[r], valid[r], groups, ax, ay, p0, nws, rhs[r], d, grad, work)
        if abs(F0) > worst:
            worst = abs(F0)
        if abs(F0) <= tol_local:
            continue
        # F is nonincreasing in t
        direction = 1.0 if F0 > 0 else -1.0
        s = step0
        lo = t0
        hi = t0
        found = False
        for it in range(61):
            t = t0 + direction * s
            Ft = _residual_at(kind, t, base, cc[r], valid[r], groups, ax, ay, p0, nws, rhs[r], d, grad, work)
            if (direction > 0 and Ft <= 0) or (direction < 0 and Ft >= 0):
                if direction > 0:
                    lo = t0 + direction * s * 0.5 if it > 0 else t0
                    hi = t
                else:
                    hi = t0 + direction * s * 0.5 if it > 0 else t0
                    lo = t
                found = True
                break
            s *= 2.0
        if not found:
            return worst, r
        # invariant: F(lo) >= 0 >= F(hi), lo < hi
        tm = 0.5 * (lo + hi)
        for it in range(200):
            tm = 0.5 * (lo + hi)
            if tm <= lo or tm >= hi:
                break
            Fm = _residual_at(kind, tm, base, cc[r], valid[r], groups, ax, ay, p0, nws, rhs[r], d, grad, work)
            if abs(Fm) <= tol_local:
                break
            if Fm > 0:
                lo = tm
            else:
                hi = tm
        u[i] = tm
    return worst, -1
