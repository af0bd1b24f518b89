import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mongeampere import _kernels as K
from mongeampere import operators as ops
from mongeampere.checks import (
    MONOTONE_OPERATORS,
    check_filter_sandwich,
    check_monotonicity,
    halfplane_area_oracle,
    lbr_oracle,
    quadratic,
    random_convex_field,
    random_spd,
)
from mongeampere.directions import coprime_stencil, orthogonal_bases, rotated_bases, stencil_from_vectors
from mongeampere.domain import disk, square
from mongeampere.grid import NodalField, build_grid

SQ8 = build_grid(square(), 1 / 8)


def node_at(grid, x):
    return int(np.argmin(np.linalg.norm(grid.interior_points - np.asarray(x), axis=1)))


def field(grid, fn):
    return NodalField.from_function(grid, fn)


# -- second differences ----------------------------------------------------------


def test_second_difference_quadratic():
    w = field(SQ8, lambda X: X[..., 0] ** 2)
    for n in (0, 17, 40):
        assert ops.second_difference(w, n, (1, 0)) == pytest.approx(2.0, abs=1e-12)


def test_second_difference_bilinear_diagonal():
    w = field(SQ8, lambda X: X[..., 0] * X[..., 1])
    assert ops.second_difference(w, node_at(SQ8, (0.25, -0.5)), (1, 1)) == pytest.approx(1.0, abs=1e-12)


def test_second_difference_shortened_at_boundary():
    g = build_grid(square(), 0.5)
    q = lambda X: X[..., 0] ** 2
    w = field(g, q)
    n = node_at(g, (0.5, 0.0))
    assert ops.second_difference(w, n, (1, 0), g=q) == pytest.approx(2.0, abs=1e-12)
    # an off-lattice boundary point: disk of radius 0.9
    gd = build_grid(disk(radius=0.9), 0.5)
    wd = field(gd, q)
    for n in range(gd.n_interior):
        assert ops.second_difference(wd, n, (1, 0), g=q) == pytest.approx(2.0, abs=1e-11)
        assert ops.second_difference(wd, n, (1, 1), g=q) == pytest.approx(1.0, abs=1e-11)


def test_directional_difference_lattice_aligned():
    g = build_grid(disk(), 1 / 16)
    w = field(g, lambda X: 0.5 * (X**2).sum(-1))
    n = node_at(g, (0.0, 0.0))
    for w_dir in ((1.0, 0.0), (0.0, 1.0), (math.sqrt(0.5), math.sqrt(0.5))):
        k = 3 if w_dir[1] == 0 or w_dir[0] == 0 else 3 * math.sqrt(2)
        assert ops.directional_second_difference(w, n, w_dir, k * g.h) == pytest.approx(1.0, abs=1e-12)


def test_directional_difference_off_lattice_consistency():
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = build_grid(disk(), h)
        w = field(g, lambda X: 0.5 * (X**2).sum(-1))
        n = node_at(g, (0.0, 0.0))
        d = (math.cos(0.3), math.sin(0.3))
        errs.append(abs(ops.directional_second_difference(w, n, d, h ** (2 / 3)) - 1))
    # the P1 error h²/δ² = h^(2/3) shrinks under refinement
    assert errs[2] < errs[0]
    assert max(errs) < 0.2


def test_directional_difference_affine_and_concave():
    g = build_grid(disk(), 1 / 8)
    aff = field(g, lambda X: 2 * X[..., 0] - X[..., 1] + 3)
    cav = field(g, lambda X: -(X**2).sum(-1))
    n = node_at(g, (0.1, 0.2))
    assert ops.directional_second_difference(aff, n, (0.6, 0.8), 0.3) == pytest.approx(0.0, abs=1e-12)
    assert ops.directional_second_difference(cav, n, (0.6, 0.8), 0.3) < 0


# -- wide-stencil family ---------------------------------------------------------


def test_ws_tensor_example():
    fam = orthogonal_bases(coprime_stencil(1))
    g = build_grid(square(), 1 / 4)
    w = field(g, lambda X: X[..., 0] ** 2 + X[..., 1] ** 2 + X[..., 0] ** 2 * X[..., 1] ** 2)
    cfg = ops.SchemeConfig(g.h)
    val = ops.ma_ws(w, cfg, bases=fam).values[node_at(g, (0, 0))]
    assert val == pytest.approx(4.0, abs=1e-12)


def test_ws_zero_when_every_basis_has_a_nonpositive_difference():
    w = field(SQ8, lambda X: -(X**2).sum(-1))
    assert np.all(ops.ma_ws(w, ops.SchemeConfig(SQ8.h, width=2)).values == 0)


def test_ws_variant_examples():
    canon = orthogonal_bases(stencil_from_vectors([(1, 0), (-1, 0), (0, 1), (0, -1)]))
    cfg = ops.SchemeConfig(SQ8.h)
    saddle = quadratic(np.diag([2.0, -2.0]))
    v = ops.ma_ws_variant(field(SQ8, saddle), cfg, bases=canon, g=saddle).values
    assert np.allclose(v, -2.0, atol=1e-11)
    cav = quadratic(-np.eye(2))
    v = ops.ma_ws_variant(field(SQ8, cav), cfg, bases=canon, g=cav).values
    assert np.allclose(v, -2.0, atol=1e-11)


def test_ws_variant_equals_ws_on_convex_fields():
    rng = np.random.default_rng(0)
    cfg = ops.SchemeConfig(SQ8.h, width=2)
    for _ in range(5):
        vals = random_convex_field(SQ8, rng)
        w = NodalField(SQ8, vals)
        a = ops.ma_ws(w, cfg).values
        b = ops.ma_ws_variant(w, cfg).values
        assert np.array_equal(a, b)


def test_fd9_examples():
    rng = np.random.default_rng(1)
    M = random_spd(rng)
    q = quadratic(M)
    v = ops.ma_fd9(field(SQ8, q), g=q).values
    assert np.allclose(v, np.linalg.det(M), atol=1e-10)
    bil = lambda X: X[..., 0] * X[..., 1]
    assert np.allclose(ops.ma_fd9(field(SQ8, bil), g=bil).values, -1.0, atol=1e-11)
    aff = lambda X: X[..., 0] - 3 * X[..., 1]
    assert np.allclose(ops.ma_fd9(field(SQ8, aff), g=aff).values, 0.0, atol=1e-11)


def test_fd9_rejects_disk():
    g = build_grid(disk(), 0.25)
    with pytest.raises((NotImplementedError, ValueError)):
        ops.ma_fd9(field(g, quadratic(np.eye(2))), g=quadratic(np.eye(2)))


# -- filter -------------------------------------------------------------------------


def test_filter_values():
    assert ops.filter_s(0.5) == 0.5
    assert ops.filter_s(1.5) == 0.5
    assert ops.filter_s(-1.5) == -0.5
    assert ops.filter_s(-3) == 0.0
    assert ops.filter_s(2.0) == 0.0


def test_filtered_identity_and_cutoff_regions():
    q = quadratic(np.diag([1.0, 3.0]))
    w = field(SQ8, q)
    cfg = ops.SchemeConfig(SQ8.h, alpha=1.0)
    fd = ops.ma_fd9(w, g=q).values
    assert np.allclose(ops.ma_filtered(w, cfg, g=q).values, fd, atol=1e-12)
    # rotated quadratic: the W=1 wide stencil misses the principal axes by far more than h
    R = np.array([[math.cos(0.3), -math.sin(0.3)], [math.sin(0.3), math.cos(0.3)]])
    qr = quadratic(R @ np.diag([1.0, 9.0]) @ R.T)
    wr = field(SQ8, qr)
    ws = ops.ma_ws(wr, cfg, g=qr).values
    fdr = ops.ma_fd9(wr, g=qr).values
    far = np.abs(fdr - ws) >= 2 * SQ8.h
    assert far.any()
    assert np.array_equal(ops.ma_filtered(wr, cfg, g=qr).values[far], ws[far])


def test_filter_sandwich():
    res = check_filter_sandwich(20)
    assert res.passed, res.detail


# -- regularized ----------------------------------------------------------------------


def test_smooth_min_examples():
    assert ops.smooth_min(1.0, 1.0, 0.0) == 1.0
    assert ops.smooth_min(0.0, 2.0, 2.0) == pytest.approx(1 - math.sqrt(2))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(1e-6, 1.0))
def test_smooth_min_close_to_min(vals, d):
    m = ops.smooth_min_list(vals, d)
    assert min(vals) - len(vals) * d <= m <= min(vals) + 1e-12


def test_regularized_ws_converges_linearly():
    rng = np.random.default_rng(2)
    w = NodalField(SQ8, random_convex_field(SQ8, rng))
    base = ops.ma_ws(w, ops.SchemeConfig(SQ8.h, width=2)).values
    errs = []
    for d in (1e-2, 1e-3, 1e-4):
        reg = ops.ma_ws_regularized(w, ops.SchemeConfig(SQ8.h, width=2, delta_reg=d)).values
        errs.append(np.abs(reg - base).max())
    rates = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.9)


# -- lattice basis reduction ------------------------------------------------------------


def test_lbr_gamma_values():
    assert ops.lbr_gamma(2, 1, 1) == 1.0
    assert ops.lbr_gamma(1, 1, 1) == 0.75
    assert ops.lbr_gamma(5, 1, 1) == 1.0
    with pytest.raises(ValueError):
        ops.lbr_gamma(-1, 1, 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=3, max_size=3))
def test_lbr_gamma_continuous_and_symmetric(d):
    g0 = ops.lbr_gamma(*d)
    assert g0 >= -1e-9 * max(1.0, max(d)) ** 2
    assert ops.lbr_gamma(d[1], d[2], d[0]) == pytest.approx(g0, rel=1e-12, abs=1e-9)
    assert ops.lbr_gamma(d[1], d[0], d[2]) == pytest.approx(g0, rel=1e-12, abs=1e-9)


def test_lbr_identity():
    g = build_grid(square(), 1 / 8)
    q = quadratic(np.eye(2))
    v = ops.ma_lbr(field(g, q), g=q).values
    assert np.allclose(v, 1.0, atol=1e-12)


def test_lbr_anisotropic_matches_oracle():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    g = build_grid(square(), 1 / 8)
    q = quadratic(M)
    n = node_at(g, (0, 0))
    v = ops.ma_lbr(field(g, q), g=q, width=2).values[n]
    assert v == pytest.approx(lbr_oracle(M, 2), abs=1e-12)
    assert v == pytest.approx(3.0, abs=1e-12)


def test_lbr_nonnegative():
    rng = np.random.default_rng(3)
    w = NodalField(SQ8, rng.normal(size=SQ8.n_nodes))
    assert np.all(ops.ma_lbr(w, width=2).values >= 0)


# -- power diagram ------------------------------------------------------------------------


def test_pd_identity_is_unit_square():
    q = quadratic(np.eye(2))
    v = ops.ma_pd(field(SQ8, q), g=q, width=1).values
    assert np.allclose(v, 1.0, atol=1e-12)


def test_pd_affine_gives_zero():
    aff = lambda X: X[..., 0] + 1
    assert np.allclose(ops.ma_pd(field(SQ8, aff), g=aff, width=2).values, 0.0, atol=1e-12)


def test_pd_requires_spanning_stencil():
    q = quadratic(np.eye(2))
    with pytest.raises(ValueError):
        ops.ma_pd(field(SQ8, q), g=q, stencil=stencil_from_vectors([(1, 0), (-1, 0)]))


def _kernel_area(A, b):
    grad = np.zeros(len(b))
    area, unb = K.polygon_area(A[:, 0].copy(), A[:, 1].copy(), b.copy(), False, False, grad)
    return area, unb


def test_pd_area_against_vertex_and_monte_carlo_oracles():
    rng = np.random.default_rng(4)
    S = coprime_stencil(2).vectors.astype(float)
    for k in range(100):
        b = rng.uniform(0.05, 2.0, len(S))
        A = 2 * S
        rhs = np.einsum("ij,ij->i", S, S) * b
        area, unb = _kernel_area(A, rhs)
        assert not unb
        exact = halfplane_area_oracle(A, rhs)
        assert area == pytest.approx(exact, rel=1e-6)
        if k < 10:
            # Monte-Carlo within 5 standard errors on the bounding box
            n = 200_000
            R = np.abs(rhs).max() / 2 + 1
            P = rng.uniform(-R, R, (n, 2))
            frac = np.mean(np.all(P @ A.T <= rhs, axis=1))
            box = (2 * R) ** 2
            se = box * math.sqrt(frac * (1 - frac) / n)
            assert abs(frac * box - area) <= 5 * se + 1e-12


def test_pd_monotone_in_each_difference():
    rng = np.random.default_rng(5)
    S = coprime_stencil(2).vectors.astype(float)
    for _ in range(50):
        rhs = rng.uniform(0.1, 2.0, len(S))
        a0, _ = _kernel_area(2 * S, rhs)
        j = rng.integers(len(S))
        rhs[j] += rng.uniform(0, 1)
        a1, _ = _kernel_area(2 * S, rhs)
        assert a1 >= a0 - 1e-14


# -- two-scale and convex envelope ------------------------------------------------------------


def test_two_scale_consistency_bound():
    # the P1 interpolant of ½|x|² overshoots by at most h²/4 on the split cells,
    # so every second difference lies in [1, 1 + h²/δ²] away from the boundary
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = build_grid(disk(), h)
        q = quadratic(np.eye(2))
        delta = h ** (2 / 3)
        cfg = ops.SchemeConfig(h, delta=delta, theta=h ** (1 / 3))
        v = ops.ma_two_scale(field(g, q), cfg, g=q).values
        deep = np.linalg.norm(g.interior_points, axis=1) < 1 - 2 * delta
        assert np.all(v[deep] >= 1 - 1e-12)
        assert np.all(v[deep] <= (1 + h * h / delta**2) ** 2 + 1e-12)


def test_two_scale_saddle_negative():
    g = build_grid(disk(), 1 / 8)
    saddle = lambda X: X[..., 0] ** 2 - X[..., 1] ** 2
    cfg = ops.SchemeConfig(g.h, delta=0.25, theta=0.4)
    v = ops.ma_two_scale(field(g, saddle), cfg, g=saddle).values
    assert np.all(v[np.linalg.norm(g.interior_points, axis=1) < 0.5] < 0)


def test_two_scale_convex_field_has_no_negative_part():
    g = build_grid(disk(), 1 / 8)
    q = quadratic(np.diag([1.0, 2.0]))
    frames = rotated_bases(0.4)
    cfg = ops.SchemeConfig(g.h, delta=0.25, theta=0.4)
    v = ops.ma_two_scale(field(g, q), cfg, frames=frames, g=q).values
    assert np.all(v > 0)


def test_ce_operator_signs():
    g = build_grid(square(), 1 / 8)
    cfg = ops.SchemeConfig(g.h, delta=0.25, theta=0.4)
    rng = np.random.default_rng(6)
    f = rng.normal(size=g.n_nodes)
    assert np.all(ops.ce_op(NodalField(g, f), f[: g.n_interior], cfg).values <= 0)
    fc = quadratic(np.eye(2))(g.points)
    v = ops.ce_op(NodalField(g, fc), fc[: g.n_interior], cfg).values
    deep = np.max(np.abs(g.interior_points), axis=1) <= 0.5
    assert np.allclose(v[deep], 0.0, atol=1e-12)


# -- monotonicity ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", MONOTONE_OPERATORS)
def test_monotone_operators(name):
    res = check_monotonicity(name, 100, np.random.default_rng(7))
    assert res.passed, res.detail


def test_operator_csv_dump(tmp_path):
    q = quadratic(np.eye(2))
    ev = ops.ma_ws(field(SQ8, q), ops.SchemeConfig(SQ8.h), g=q)
    p = tmp_path / "dump.csv"
    ev.to_csv(p, SQ8)
    lines = p.read_text().splitlines()
    assert lines[0] == "node,x,y,value,argmin" and len(lines) == SQ8.n_interior + 1


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        ops.SchemeConfig(0.1, alpha=3.0)
    with pytest.raises(ValueError):
        ops.SchemeConfig(0.1, delta=0.01)
    with pytest.raises(ValueError):
        ops.SchemeConfig(-1.0)
