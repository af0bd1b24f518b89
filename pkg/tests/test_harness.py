import json
import math

import numpy as np
import pytest

from mongeampere.checks import check_norm_homogeneity
from mongeampere.cli import EXIT_BAD_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from mongeampere.domain import square
from mongeampere.grid import NodalField, build_grid
from mongeampere.norms import error_norms, error_norms_of
from mongeampere.problems import catalog, get_problem
from mongeampere.study import (
    CSV_HEADER,
    ConvergenceReport,
    LevelResult,
    StudyConfig,
    convergence_study,
    emit_csv,
    fit_orders,
    parse_rule,
    solve_level,
    warm_start,
)

# -- catalog ----------------------------------------------------------------------


def test_catalog_labels_and_boundary_traces():
    labels = [p.label for p in catalog()]
    assert labels == ["ex1", "ex2", "ex3", "quad", "cone"]
    for prob in catalog():
        grid = build_grid(prob.domain, 1 / 8)
        B = grid.boundary_points
        assert np.array_equal(prob.g(B), prob.exact_u(B))
        if prob.f is not None:
            assert np.all(prob.f(grid.points) >= 0)


def test_smooth_example_at_origin():
    prob = get_problem("ex1")
    o = np.zeros((1, 2))
    assert prob.exact_u(o)[0] == 1.0
    assert prob.f(o)[0] == 1.0


def test_smooth_example_density_is_hessian_determinant():
    prob = get_problem("ex1")
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (20, 2))
    eps = 1e-4
    for x in X:
        H = np.empty((2, 2))
        for a in range(2):
            for b in range(2):
                ea, eb = np.eye(2)[a] * eps, np.eye(2)[b] * eps
                P = np.array([x + ea + eb, x + ea - eb, x - ea + eb, x - ea - eb])
                v = prob.exact_u(P)
                H[a, b] = (v[0] - v[1] - v[2] + v[3]) / (4 * eps * eps)
        assert np.linalg.det(H) == pytest.approx(prob.f(x[None])[0], rel=1e-6)


def test_c11_example_is_continuous_on_seam():
    prob = get_problem("ex2")
    seam = np.array([[0.5, 0.0], [0.0, -0.5], [0.5 / math.sqrt(2), 0.5 / math.sqrt(2)]])
    assert np.allclose(prob.exact_u(seam), 0.5, atol=1e-15)
    inside = seam * (1 - 1e-9)
    outside = seam * (1 + 1e-9)
    assert np.allclose(prob.exact_u(inside), prob.exact_u(outside), atol=1e-8)
    assert np.all(prob.f(inside) == 16.0)
    assert np.allclose(prob.f(outside), 32.0, atol=1e-6)


def test_degenerate_example_branches_agree_on_curve():
    prob = get_problem("ex3")
    x1 = np.linspace(0.1, 0.95, 9)
    on = np.column_stack([x1, x1**3])
    assert np.allclose(prob.exact_u(on), 2.5 * x1**4, rtol=1e-13)
    above = np.column_stack([x1, x1**3 * (1 + 1e-9)])
    assert np.allclose(prob.exact_u(above), 2.5 * x1**4, rtol=1e-7)
    mirrored = np.column_stack([-x1, -(x1**3)])
    assert np.allclose(prob.exact_u(mirrored), 2.5 * x1**4, rtol=1e-13)


def test_cone_problem_is_a_point_mass():
    prob = get_problem("cone")
    grid = build_grid(prob.domain, 1 / 8)
    m = prob.masses(grid)
    assert m.sum() == pytest.approx(math.pi)
    assert np.count_nonzero(m) == 1
    assert np.linalg.norm(grid.interior_points[np.argmax(m)]) < 1e-12


def test_unknown_problem_label():
    with pytest.raises(ValueError):
        get_problem("ex9")


# -- norms -------------------------------------------------------------------------


def test_norms_vanish_on_exact_interpolant():
    prob = get_problem("ex1")
    grid = build_grid(prob.domain, 1 / 8)
    nrm = error_norms(NodalField(grid, prob.exact_u(grid.points)), prob, grid)
    assert nrm.linf == nrm.w21 == nrm.h2 == nrm.h1 == 0.0


def test_constant_shift_only_affects_zeroth_order_parts():
    prob = get_problem("ex2")
    grid = build_grid(prob.domain, 1 / 8)
    c = 0.3
    nrm = error_norms(NodalField(grid, prob.exact_u(grid.points) + c), prob, grid)
    assert nrm.linf == pytest.approx(c)
    assert nrm.w21 == pytest.approx(0.0, abs=1e-12)
    assert nrm.h2 == pytest.approx(0.0, abs=1e-12)
    # boundary nodes carry the same shift, so every backward difference vanishes
    assert nrm.h1 == pytest.approx(c * math.sqrt(grid.h**2 * grid.n_interior), rel=1e-12)


def test_second_order_norm_of_x1_squared():
    grid = build_grid(square(), 1 / 8)
    eps = 1e-3
    err = -eps * grid.points[:, 0] ** 2
    nrm = error_norms_of(grid, err)
    full = grid.n_interior - nrm.excluded
    # per full-stencil node: (2ε)² from (1,0), 0 from (0,1), ε² from each diagonal
    assert nrm.h2 == pytest.approx(math.sqrt(grid.h**2 * full * 6 * eps**2), rel=1e-10)
    assert nrm.w21 == pytest.approx(grid.h**2 * full * 4 * eps, rel=1e-10)


def test_norm_homogeneity():
    res = check_norm_homogeneity(20, np.random.default_rng(1))
    assert res.passed, res.detail


def test_norms_need_exact_solution():
    prob = get_problem("cone")
    grid = build_grid(prob.domain, 1 / 4)
    no_exact = type(prob)("x", prob.domain, None, None)
    with pytest.raises(ValueError):
        error_norms(NodalField(grid, np.zeros(grid.n_nodes)), no_exact, grid)


def test_dim_counts_interior_nodes():
    grid = build_grid(square(), 1 / 16)
    assert grid.n_interior == 31 * 31 == 961


# -- studies -----------------------------------------------------------------------


def test_parse_rule():
    assert parse_rule("h^(2/3)")(0.125) == pytest.approx(0.25)
    assert parse_rule("2*h^(1/3)")(1 / 8) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        parse_rule("sqrt(h)")
    with pytest.raises(ValueError):
        StudyConfig("nope")


def test_quadratic_study_reports_exact_orders(tmp_path):
    prob = get_problem("quad")
    rep = convergence_study(prob, StudyConfig("ws"), [1 / 4, 1 / 8, 1 / 16])
    assert rep.converged
    assert [r.h for r in rep.rows] == [0.25, 0.125, 0.0625]
    for r in rep.rows:
        assert max(r.errors().values()) <= 1e-11
    assert all(v == "exact" for v in rep.fits.values())


def test_fit_orders_recovers_power_laws():
    rows = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        dim = int(round((2 / h - 1) ** 2))
        rows.append(LevelResult(dim, h, 3 * h**2, h, 2 * h**0.5, h**1.5, 1, 0.0, 0.0, True))
    fits = fit_orders(rows)
    assert fits["Linferr"]["h"] == pytest.approx(2.0)
    assert fits["H1err"]["h"] == pytest.approx(1.0)
    assert fits["W21err"]["h"] == pytest.approx(0.5)
    assert fits["Linferr"]["dim"] == pytest.approx(-1.0, abs=0.05)


def test_fit_skips_failed_levels():
    rows = [LevelResult(9, 0.5, 1.0, 1.0, 1.0, 1.0, 1, 0.0, 0.0, True),
            LevelResult(49, 0.25, 0.25, 0.5, 0.5, 0.5, 1, 0.0, 0.0, True),
            LevelResult(225, 0.125, math.nan, math.nan, math.nan, math.nan, 0, 0.0, math.inf, False)]
    fits = fit_orders(rows)
    assert fits["Linferr"]["h"] == pytest.approx(2.0)


def test_emit_csv_layout(tmp_path):
    rep = ConvergenceReport("ex1", {"scheme": "ws"})
    rep.rows = [LevelResult(961, 1 / 16, 0.1, 0.2, 0.3, 0.4, 3, 1.0, 1e-12, True),
                LevelResult(3969, 1 / 32, 0.1 / 3, 0.05, 0.15, 0.2, 4, 2.0, 1e-12, True)]
    rep.fit()
    path = emit_csv(rep, tmp_path / "out.csv")
    lines = path.read_bytes().split(b"\n")
    assert lines[0] == b"Dim,Linferr,H1err,W21err,H2err"
    assert CSV_HEADER == "Dim,Linferr,H1err,W21err,H2err"
    assert len([ln for ln in lines[1:] if ln]) == 2
    first = lines[2].decode().split(",")
    assert first[0] == "3969"
    assert float(first[1]) == 0.1 / 3 and first[1] == repr(0.1 / 3)
    rates = json.loads((tmp_path / "out.rates.json").read_text())
    assert rates["problem"] == "ex1"
    assert rates["fits"]["H1err"]["h"] == pytest.approx(2.0)


def test_study_needs_three_levels():
    with pytest.raises(ValueError):
        convergence_study(get_problem("quad"), StudyConfig("ws"), [0.5, 0.25])


def test_warm_start_is_neutral():
    prob = get_problem("ex2")
    cfg = StudyConfig("ws", width=2)
    coarse = build_grid(prob.domain, 1 / 8)
    fine = build_grid(prob.domain, 1 / 16)
    uc, _ = solve_level(prob, coarse, cfg)
    cold, rc = solve_level(prob, fine, cfg)
    warm, rw = solve_level(prob, fine, cfg, init=warm_start(uc, fine, prob, convex=False))
    assert rc.converged and rw.converged
    tol = 1e-10 * (1 + prob.f_values(fine).max())
    assert np.abs(cold.values - warm.values).max() <= 10 * tol


# -- command line ------------------------------------------------------------------


def test_cli_solve_reports_json(capsys):
    assert main(["solve", "--scheme", "ws", "--example", "quad", "--h", "1/4"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["converged"] and out["errors"]["linf"] < 1e-11
    assert out["grid"]["h"] == 0.25


def test_cli_bad_configuration_exit_codes(capsys):
    assert main(["solve", "--scheme", "ws", "--example", "quad", "--h", "1/4", "--bogus"]) == EXIT_BAD_CONFIG
    assert main(["solve", "--scheme", "magic", "--example", "quad", "--h", "1/4"]) == EXIT_BAD_CONFIG
    assert main(["solve", "--scheme", "ws", "--example", "quad", "--h", "1/4", "--alpha", "3"]) == EXIT_BAD_CONFIG
    assert main(["study", "--scheme", "ws", "--example", "quad", "--levels", "1/4,1/8"]) == EXIT_BAD_CONFIG
    assert main(["solve", "--scheme", "ws", "--example", "quad", "--h", "0"]) == EXIT_BAD_CONFIG
    assert "usage" in capsys.readouterr().err


def test_cli_non_convergence_exit_code(capsys):
    code = main(["solve", "--scheme", "ws", "--example", "ex1", "--h", "1/8", "--max-iters", "1"])
    assert code == EXIT_NOT_CONVERGED


def test_cli_check_module(capsys):
    assert main(["check", "--module", "directions"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") >= 3 and "FAIL" not in out


def test_cli_study_writes_csv_and_rates(tmp_path, capsys):
    out = tmp_path / "ex1_op.csv"
    code = main(["study", "--scheme", "op", "--example", "ex1", "--levels", "1/4,1/8,1/16", "--out", str(out)])
    assert code == EXIT_OK
    assert out.read_text().startswith(CSV_HEADER + "\n")
    assert (tmp_path / "ex1_op.rates.json").exists()


def test_cli_study_is_deterministic(tmp_path, capsys):
    args = ["study", "--scheme", "ws", "--stencil-width", "2", "--example", "ex2", "--levels", "1/4,1/8,1/16"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
