import numpy as np
import pytest

from mfgplan import DualField, GridSpec, StaggeredField
from mfgplan.diagnostics import (
    diagnose,
    energy_identity_residual,
    holder_estimate,
    hj_violation,
    optimality_relations,
    refinement_study,
    space_seminorms,
    stability_experiment,
    time_seminorms,
    total_variation,
)
from mfgplan.model import exponents
from mfgplan.solver import SolverConfig
from conftest import gaussian_problem, uniform_problem


def uniform_pair(grid):
    t = grid.mid_times().reshape(-1, 1)
    u = np.broadcast_to(-t, grid.mid_shape).copy()
    primal = StaggeredField(np.ones(grid.node_shape), np.zeros(grid.face_shape))
    return primal, DualField(u, np.ones(grid.mid_shape))


def test_analytic_saddle_certificates_vanish():
    grid = GridSpec(1, 16, 16)
    p = uniform_problem()
    pair = uniform_pair(grid)
    assert energy_identity_residual(p, grid, pair) == pytest.approx(0.0, abs=1e-13)
    assert hj_violation(p, grid, pair) == 0.0
    assert optimality_relations(p, grid, pair) == (0.0, 0.0)
    rep = diagnose(p, grid, pair)
    assert rep.gap == pytest.approx(0.0, abs=1e-13)
    assert rep.feas == 0.0


def test_hj_violation_trivial_dual():
    grid = GridSpec(1, 16, 16)
    p = uniform_problem()
    primal, _ = uniform_pair(grid)
    zero = DualField(np.zeros(grid.mid_shape), np.zeros(grid.mid_shape))
    assert hj_violation(p, grid, (primal, zero)) == 0.0
    assert hj_violation(p, grid, (primal, zero), against="alpha") == 0.0
    # u = +t violates by 1 against alpha = 0
    plus = DualField(-uniform_pair(grid)[1].u, np.zeros(grid.mid_shape))
    assert hj_violation(p, grid, (primal, plus), against="alpha") == 0.0
    minus = DualField(uniform_pair(grid)[1].u, np.zeros(grid.mid_shape))
    assert hj_violation(p, grid, (primal, minus), against="alpha") == pytest.approx(1.0)


def test_gauge_invariance_of_certificates(gaussian_run):
    grid, b = gaussian_run
    p = gaussian_problem()
    base = diagnose(p, grid, b)
    shifted = diagnose(p, grid, (b.primal, b.dual.shifted(4.25)))
    for key in ("A", "gap", "energy_identity", "hj_violation", "opt_rel_w", "opt_rel_alpha",
                "seminorm_space_u", "seminorm_time_u", "holder", "total_variation_u"):
        assert getattr(shifted, key) == pytest.approx(getattr(base, key), rel=1e-9, abs=1e-12), key


def test_empty_mask_is_vacuous(gaussian_run):
    grid, b = gaussian_run
    assert optimality_relations(gaussian_problem(), grid, b, eps_mask=2.0) == (0.0, 0.0)


def test_seminorms_trivial_cases():
    grid = GridSpec(1, 16, 16)
    p = uniform_problem()
    primal, dual = uniform_pair(grid)
    s_m, s_u = space_seminorms(p, grid, (primal, dual))
    assert s_m == 0.0 and s_u == 0.0
    t_m, t_u = time_seminorms(p, grid, (primal, dual))
    assert t_m == 0.0 and t_u == 0.0
    zero = DualField(np.zeros(grid.mid_shape), np.zeros(grid.mid_shape))
    assert space_seminorms(p, grid, (primal, zero))[1] == 0.0


def test_space_seminorm_of_cosine_density():
    # q = 2: s_m = ||grad m|| with m = 1 + 0.5 cos(2 pi x), i.e. sqrt(pi^2 / 2) over unit time
    grid = GridSpec(1, 256, 8)
    x = grid.cell_centers()[..., 0]
    m = np.broadcast_to(1 + 0.5 * np.cos(2 * np.pi * x), grid.node_shape).copy()
    primal = StaggeredField(m, np.zeros(grid.face_shape))
    dual = DualField(np.zeros(grid.mid_shape), np.zeros(grid.mid_shape))
    s_m, _ = space_seminorms(uniform_problem(), grid, (primal, dual))
    assert s_m == pytest.approx(np.pi / np.sqrt(2), rel=1e-3)


def test_holder_estimate_cases():
    grid = GridSpec(1, 16, 16)
    e = exponents(uniform_problem())
    assert holder_estimate(grid, np.full(grid.mid_shape, 2.0), e) <= 0.0
    u = uniform_pair(grid)[1].u
    assert 0.0 < holder_estimate(grid, u, e) <= 1.0
    assert holder_estimate(grid, u, e, seed=3) == holder_estimate(grid, u, e, seed=3)


def test_total_variation_of_linear_u():
    grid = GridSpec(1, 16, 16)
    u = uniform_pair(grid)[1].u
    assert total_variation(grid, u) == pytest.approx(1.0 - grid.dt, rel=1e-12)


def test_converged_run_certificates(gaussian_run):
    grid, b = gaussian_run
    rep = diagnose(gaussian_problem(), grid, b)
    assert rep.energy_identity <= 5e-4
    assert rep.hj_violation <= 5e-4
    assert rep.opt_rel_w <= 1e-2 and rep.opt_rel_alpha <= 1e-2
    assert 0 < rep.mask_fraction <= 1


def test_time_reversal_keeps_time_seminorms(gaussian_run):
    from conftest import cached_solve

    grid, b = gaussian_run
    _, r = cached_solve(gaussian_problem().swapped(), 64, 64, 1e-4)
    p = gaussian_problem()
    a, c = time_seminorms(p, grid, b), time_seminorms(p.swapped(), grid, r)
    assert c[0] == pytest.approx(a[0], rel=1e-3)
    assert c[1] == pytest.approx(a[1], rel=1e-3)


def test_stability_zero_perturbation_reproduces_base(gaussian_run):
    grid, b = gaussian_run
    cfg = SolverConfig(tol_gap=1e-4, tol_feas=1e-4)
    table = stability_experiment(gaussian_problem(), grid, cfg, eps_list=[0.2], base=b)
    assert table.B[0] == b.B
    assert table.eps == [0.0, 0.2]
    with pytest.raises(ValueError):
        stability_experiment(gaussian_problem(), grid, cfg, eps_list=[0.0])


def test_refinement_uniform_is_exact():
    table = refinement_study(uniform_problem(), SolverConfig(tol_gap=1e-10, tol_feas=1e-10), [8, 16], [8, 16])
    np.testing.assert_allclose(table.column("B"), 0.5, rtol=1e-10)


def test_refinement_gaussian_B_is_cauchy():
    table = refinement_study(gaussian_problem(), SolverConfig(tol_gap=1e-7, tol_feas=1e-7), [16, 32, 64], [16, 32, 64])
    b = table.column("B")
    d = np.abs(np.diff(b))
    assert d[1] < d[0]
    assert table.B_cauchy()


def test_refinement_rejects_unsorted_lists():
    with pytest.raises(ValueError):
        refinement_study(uniform_problem(), SolverConfig(), [32, 16], [32, 16])
