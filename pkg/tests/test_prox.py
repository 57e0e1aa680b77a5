import numpy as np
import pytest

from mfgplan.model import HamiltonianSpec, ProblemSpec, SpatialField
from mfgplan.prox import ProxQuery, prox_cost, prox_query, solve_scalar_monotone
from oracles import bisection_root, prox_grid_search, prox_objective


def scalar_prox(gamma, mt, wt, r=2.0, q=2.0, **kw):
    m, w = prox_cost(gamma, np.array([mt]), np.array([[wt]]), r=r, q=q, **kw)
    return float(m[0]), float(w[0, 0])


def test_quadratic_example():
    m, w = scalar_prox(1.0, 1.0, 0.0)
    assert m == pytest.approx(0.5, abs=1e-12)
    assert w == 0.0
    # the grid-search oracle agrees to its resolution
    best = prox_grid_search(1.0, 0.0, 1.0, 2.0, 2.0)
    assert float(prox_objective(m, w, 1.0, 0.0, 1.0, 2.0, 2.0)) == pytest.approx(best, abs=1e-10)


def test_negative_density_goes_to_boundary():
    assert scalar_prox(1.0, -1.0, 0.0) == (0.0, 0.0)


def test_vanishing_step_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mt, wt = rng.uniform(0.1, 3), rng.normal()
        m, w = scalar_prox(1e-8, mt, wt, r=3.0, q=1.5)
        assert abs(m - mt) <= 1e-6 and abs(w - wt) <= 1e-6


@pytest.mark.parametrize("r, q", [(2.0, 2.0), (3.0, 2.0), (2.5, 1.5)])
def test_brute_force_equivalence(r, q):
    rng = np.random.default_rng(int(r * 10))
    n = 500
    gamma = 10 ** rng.uniform(-1.5, 1.0, n)
    mt, wt = rng.normal(size=n) * 2, rng.normal(size=n) * 2
    vals = np.empty(n)
    for i in range(n):
        m, w = scalar_prox(gamma[i], mt[i], wt[i], r=r, q=q)
        vals[i] = prox_objective(m, w, mt[i], wt[i], gamma[i], r, q)
    best = prox_grid_search(mt, wt, gamma, r, q)
    # never meaningfully worse than the exhaustive search, and within 1e-5 of it
    assert np.all(vals <= best + 1e-12 * (1 + np.abs(best)))
    assert np.all(np.abs(vals - best) <= 1e-5 * (1 + np.abs(best)))


def test_variable_coefficients_and_vector_flux():
    rng = np.random.default_rng(1)
    n = 200
    mt = rng.normal(size=n) * 2
    wt = rng.normal(size=(n, 2)) * 2
    a, b, c = rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n), rng.uniform(0, 1, n)
    m, w = prox_cost(0.7, mt, wt, r=2.5, q=1.7, a=a, b=b, c=c)
    for i in range(0, n, 10):
        # the minimizer keeps the flux direction, so a scalar search along it suffices
        W = np.linalg.norm(wt[i])
        best = prox_grid_search(mt[i], W, 0.7, 2.5, 1.7, a[i], b[i], c[i])
        val = float(prox_objective(m[i], np.linalg.norm(w[i]), mt[i], W, 0.7, 2.5, 1.7, a[i], b[i], c[i]))
        assert abs(val - best) <= 1e-5 * (1 + abs(best))
        if W > 0:
            assert w[i, 0] * wt[i, 1] - w[i, 1] * wt[i, 0] == pytest.approx(0.0, abs=1e-12)


def test_nonexpansive():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(500, 3))
    y = x + rng.normal(size=(500, 3)) * 0.3
    mx, wx = prox_cost(0.5, x[:, 0], x[:, 1:], r=3.0, q=2.0)
    my, wy = prox_cost(0.5, y[:, 0], y[:, 1:], r=3.0, q=2.0)
    out = np.sqrt((mx - my) ** 2 + np.sum((wx - wy) ** 2, axis=1))
    inp = np.linalg.norm(x - y, axis=1)
    assert np.all(out <= inp * (1 + 1e-10))


def test_optimality_certificate_interior():
    # at an interior minimizer with m > 0, the gradient of the objective vanishes
    rng = np.random.default_rng(3)
    r, q, gamma = 2.0, 2.0, 0.8
    mt = rng.uniform(0.5, 2, 100)
    wt = rng.normal(size=(100, 1))
    m, w = prox_cost(gamma, mt, wt, r=r, q=q)
    v = w[:, 0] / m
    dm = -0.5 * v**2 + m + (m - mt) / gamma
    dw = v + (w[:, 0] - wt[:, 0]) / gamma
    assert np.all(m > 0)
    np.testing.assert_allclose(dm, 0.0, atol=1e-10)
    np.testing.assert_allclose(dw, 0.0, atol=1e-10)


def test_zero_density_forces_zero_flux():
    rng = np.random.default_rng(4)
    m, w = prox_cost(0.3, -np.abs(rng.normal(size=100)) - 1, rng.normal(size=(100, 2)), r=2.0, q=2.0)
    zero = m == 0
    assert zero.any()
    assert np.all(w[zero] == 0)


def test_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        prox_cost(0.0, np.ones(1), np.zeros((1, 1)), r=2.0, q=2.0)


def test_prox_query_front_end():
    p = ProblemSpec(d=1, hamiltonian=HamiltonianSpec(b=SpatialField("cosine", mean=1.0, amplitude=0.3)))
    m, w = prox_query(ProxQuery(1.0, [0.25], 1.0, [0.0]), p)
    assert m == pytest.approx(0.5) and w[0] == 0.0


def test_scalar_root_examples():
    assert solve_scalar_monotone(lambda m: m - 2, (0, 5)) == pytest.approx(2.0, abs=1e-12)
    assert solve_scalar_monotone(lambda m: m**3 - 8, (0, 5)) == pytest.approx(2.0, abs=1e-12)
    assert solve_scalar_monotone(lambda m: m**3 - 8, (0, 5), dg=lambda m: 3 * m**2) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        solve_scalar_monotone(lambda m: m + 1, (0, 5))


def test_random_cubic_against_bisection():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a3, a1 = rng.uniform(0.1, 3, 2)
        c0 = rng.uniform(-20, 20)

        def g(x):
            return a3 * x**3 + a1 * x + c0

        ref = bisection_root(g, -10.0, 10.0)
        assert solve_scalar_monotone(g, (-10, 10)) == pytest.approx(ref, abs=1e-10)
        got = solve_scalar_monotone(g, (-10, 10), dg=lambda x: 3 * a3 * x**2 + a1)
        assert got == pytest.approx(ref, abs=1e-10)
