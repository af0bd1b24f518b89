import math

import numpy as np
import pytest

from mongeampere.checks import (
    check_envelope_oracle,
    check_maximum_principle,
    envelope_oracle,
    quadratic,
    random_convex_field,
    random_spd,
)
from mongeampere.domain import disk, square
from mongeampere.geometry import (
    GeometryError,
    alexandrov_bound_check,
    contact_set,
    convexify,
    is_nodally_convex,
    lower_convex_hull,
    op_residual,
    subdifferential_areas,
    subdifferential_polygon,
)
from mongeampere.grid import NodalField, build_grid

CROSS = np.array([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (0.0, 0.0)])


def evaluate(env, P):
    """Piecewise-linear envelope at arbitrary points (brute-force triangle search)."""
    out = np.full(len(P), np.nan)
    for a, b, c in env.triangles:
        T = env.points[[a, b, c]]
        B = np.column_stack([T[1] - T[0], T[2] - T[0]])
        lam = np.linalg.solve(B, (P - T[0]).T).T
        inside = (lam >= -1e-12).all(1) & (lam.sum(1) <= 1 + 1e-12)
        z = env.envelope[[a, b, c]]
        out[inside] = z[0] + lam[inside] @ (z[1:] - z[0])
    return out


def star_samples(n=400, seed=0):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (n, 2))
    return P[np.abs(P).sum(1) <= 1]


@pytest.mark.parametrize("vals,fn,ntri", [
    ((1, 0, 1, 0, 0), lambda P: np.abs(P[:, 0]), 2),
    ((0, 1, 0, 1, 0), lambda P: np.abs(P[:, 1]), 2),
    ((1, 1, 1, 1, 0), lambda P: np.abs(P).sum(1), 4),
])
def test_cross_envelopes(vals, fn, ntri):
    env = lower_convex_hull((CROSS, np.array(vals, dtype=float)))
    P = star_samples()
    assert np.allclose(evaluate(env, P), fn(P), atol=1e-12)
    assert len(env.triangles) == ntri
    assert np.all(env.on_envelope)


def test_anisotropic_star():
    e = np.array([1.0, 2.0])
    pts = np.array([(0, 0), (1, 0), (-1, 1), (-2, 1), (-1, 0), (1, -1), (2, -1)], dtype=float)
    env = lower_convex_hull((pts, (pts @ e) ** 2))
    assert np.all(env.on_envelope)
    # sample the star: convex combinations inside the hexagon
    rng = np.random.default_rng(1)
    lam = rng.dirichlet(np.ones(len(pts)), 300)
    P = lam @ pts
    assert np.allclose(evaluate(env, P), np.abs(P @ e), atol=1e-12)


def test_collinear_and_tiny_inputs_rejected():
    with pytest.raises(GeometryError):
        lower_convex_hull((np.array([(0.0, 0), (1, 1), (2, 2), (3, 3)]), np.zeros(4)))
    with pytest.raises(GeometryError):
        lower_convex_hull((np.array([(0.0, 0), (1, 0)]), np.zeros(2)))


def test_envelope_below_field_and_convex():
    rng = np.random.default_rng(2)
    g = build_grid(disk(), 0.2)
    vals = rng.normal(size=g.n_nodes)
    env = lower_convex_hull(NodalField(g, vals))
    assert np.all(env.envelope <= vals + 1e-12)
    # convexity across every interior edge: the opposite vertex lies above the neighbour's plane
    for t, (a, b, c) in enumerate(env.triangles):
        grad = env.gradients[t]
        z0 = env.envelope[a] - grad @ env.points[a]
        plane = env.points @ grad + z0
        assert np.all(env.envelope >= plane - 1e-10)


def test_envelope_matches_lp_oracle():
    res = check_envelope_oracle(40, np.random.default_rng(3))
    assert res.passed, res.detail


def test_identity_quadratic_subdifferential_is_h_squared():
    h = 1 / 8
    g = build_grid(square(), h)
    env = lower_convex_hull(NodalField.from_function(g, quadratic(np.eye(2))))
    deep = np.flatnonzero(np.max(np.abs(g.interior_points), axis=1) <= 1 - 2 * h)
    assert np.allclose(subdifferential_areas(env, deep), h * h, rtol=1e-12)


def test_polygon_matches_area_and_orientation():
    g = build_grid(square(), 0.25)
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    env = lower_convex_hull(NodalField.from_function(g, quadratic(M)))
    n = int(np.argmin(np.linalg.norm(g.interior_points, axis=1)))
    poly = subdifferential_polygon(env, n)
    x, y = poly.vertices.T
    shoelace = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert shoelace > 0 and poly.area == pytest.approx(shoelace)
    assert poly.area == pytest.approx(g.h**2 * np.linalg.det(M), rel=1e-12)


def test_cone_subdifferential_tends_to_pi():
    errs = []
    for h in (1 / 4, 1 / 8, 1 / 16):
        g = build_grid(disk(), h)
        env = lower_convex_hull(NodalField.from_function(g, lambda X: np.linalg.norm(X, axis=-1)))
        n = int(np.argmin(np.linalg.norm(g.interior_points, axis=1)))
        errs.append(abs(subdifferential_polygon(env, n).area - math.pi))
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.02 * math.pi


def test_affine_field_has_point_subdifferentials():
    g = build_grid(disk(), 0.25)
    env = lower_convex_hull(NodalField.from_function(g, lambda X: 2 * X[..., 0] - X[..., 1] + 1))
    assert np.allclose(subdifferential_areas(env), 0.0, atol=1e-12)


def test_affine_shift_preserves_areas():
    rng = np.random.default_rng(4)
    g = build_grid(square(), 0.2)
    vals = random_convex_field(g, rng)
    a = subdifferential_areas(lower_convex_hull(NodalField(g, vals)))
    b = subdifferential_areas(lower_convex_hull(NodalField(g, vals + g.points @ [3.0, -2.0] + 5)))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_nodal_convexity():
    g = build_grid(disk(), 0.2)
    assert is_nodally_convex(NodalField.from_function(g, lambda X: np.exp(X[..., 0]) + (X**2).sum(-1)))
    assert not is_nodally_convex(NodalField.from_function(g, lambda X: -(X**2).sum(-1)))
    assert is_nodally_convex((CROSS, np.array([1.0, 0, 1, 0, 0])))


def test_nodal_convexity_against_supporting_planes():
    rng = np.random.default_rng(5)
    g = build_grid(square(), 0.25)
    for _ in range(20):
        vals = quadratic(random_spd(rng))(g.points) + 0.05 * rng.normal(size=g.n_nodes)
        oracle = all(envelope_oracle(g.points, vals, i) >= vals[i] - 1e-9 for i in range(g.n_interior))
        assert is_nodally_convex(NodalField(g, vals)) == oracle


def test_op_residual_for_identity_quadratic():
    h = 1 / 8
    g = build_grid(square(), h)
    r = op_residual(NodalField.from_function(g, quadratic(np.eye(2))), np.full(g.n_interior, h * h))
    deep = np.max(np.abs(g.interior_points), axis=1) <= 1 - 2 * h
    assert np.allclose(r[deep], 0.0, atol=1e-15)
    aff = NodalField.from_function(g, lambda X: X[..., 0])
    assert np.allclose(op_residual(aff, np.zeros(g.n_interior)), 0.0, atol=1e-14)


def test_contact_sets():
    g = build_grid(square(), 0.25)
    conv = NodalField.from_function(g, quadratic(np.eye(2)))
    assert len(contact_set(conv)) == g.n_interior
    vals = np.ones(g.n_nodes)
    dip = int(np.argmin(np.linalg.norm(g.interior_points - 0.25, axis=1)))
    vals[dip] = -1.0
    assert dip in contact_set(NodalField(g, vals))
    # nonnegative with zero boundary minimum and a strictly positive concave bump: no interior contact
    bump = NodalField.from_function(g, lambda X: 1 - (X**2).max(-1))
    assert len(contact_set(bump)) == 0


def test_alexandrov_estimate():
    g = build_grid(disk(), 0.1)
    w = NodalField.from_function(g, lambda X: (X**2).sum(-1) - 1)
    lhs, rhs = alexandrov_bound_check(w)
    assert lhs == pytest.approx(1.0)
    assert lhs <= disk().diameter * rhs
    lhs10, rhs10 = alexandrov_bound_check(NodalField(g, 10 * w.values))
    assert lhs10 == pytest.approx(10 * lhs) and rhs10 == pytest.approx(10 * rhs)
    assert alexandrov_bound_check(NodalField(g, np.abs(w.values)))[0] == 0.0
    with pytest.raises(GeometryError):
        alexandrov_bound_check(NodalField(g, w.values - 1))


def test_convexify():
    rng = np.random.default_rng(6)
    g = build_grid(square(), 0.25)
    vals = rng.normal(size=g.n_nodes)
    c = convexify(NodalField(g, vals))
    assert np.all(c.values <= vals + 1e-15)
    assert is_nodally_convex(c)
    assert np.array_equal(convexify(c).values, c.values)
    cross = lower_convex_hull((CROSS, np.array([1.0, 1, 1, 1, 2])))
    assert cross.envelope[4] == pytest.approx(1.0)


def test_translation_invariance_and_refinement_scaling():
    rng = np.random.default_rng(7)
    for _ in range(5):
        M = random_spd(rng, 4.0)
        lam = np.linalg.eigvalsh(M)
        R = lam[1] / lam[0] * 2
        areas = {}
        for h in (1 / 16, 1 / 32):
            g = build_grid(square(), h)
            env = lower_convex_hull(NodalField.from_function(g, quadratic(M)))
            ok = np.flatnonzero(np.max(np.abs(g.interior_points), axis=1) <= 1 - (R + 1) * h)
            a = subdifferential_areas(env, ok)
            assert np.ptp(a) <= 1e-10 * a.max()
            areas[h] = a[0]
        assert areas[1 / 16] == pytest.approx(4 * areas[1 / 32], rel=1e-12)


def test_adjacent_set_within_radius():
    rng = np.random.default_rng(8)
    h = 1 / 16
    g = build_grid(square(), h)
    for _ in range(20):
        M = random_spd(rng, 4.0)
        lam = np.linalg.eigvalsh(M)
        R = lam[1] / lam[0] * 2
        env = lower_convex_hull(NodalField.from_function(g, quadratic(M)))
        ok = np.flatnonzero(np.max(np.abs(g.interior_points), axis=1) <= 1 - (R + 1) * h)[::37]
        q, t = env.triangles_at(ok)
        d = np.linalg.norm(env.points[env.triangles[t]] - env.points[q][:, None, :], axis=2)
        assert d.max() <= R * h + 1e-12


def test_maximum_principle():
    res = check_maximum_principle(30, np.random.default_rng(9))
    assert res.passed, res.detail


def test_off_export():
    env = lower_convex_hull((CROSS, np.array([1.0, 1, 1, 1, 0])))
    lines = env.to_off().splitlines()
    assert lines[0] == "OFF" and lines[1] == "5 4 0" and len(lines) == 2 + 5 + 4
