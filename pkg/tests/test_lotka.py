import math

import numpy as np
import pytest
from scipy import stats

from rigepi.kernel import exact_laplace_exponential
from rigepi.lotka import (LotkaProblem, build_problem, evaluate_lotka, geometric_partial_sums,
                          mean_age_childbearing, secondary_series, solve_malthusian)
from rigepi.weights import DiscreteWeightLaw, ExponentialLaw, ModelError

from conftest import make_model


def toy_problem():
    # one secondary per clique, mu_A_bar = 2, L_2 = 1 / (1 + lam)
    return LotkaProblem(mu_A_bar=2.0, pmf=np.array([0.0, 1.0]),
                        laplace=lambda lam: np.array([1.0 / (1.0 + lam)]))


def grid_root(problem, hi=10.0):
    """Sign change of the Lotka function by nested grid scans (no root finder)."""
    lo_, hi_ = 0.0, hi
    for step in (1e-2, 1e-4, 1e-6, 1e-8):
        grid = np.arange(lo_, hi_ + step, step)
        vals = np.array([evaluate_lotka(problem, x) for x in grid]) - 1
        i = int(np.flatnonzero(vals < 0)[0])
        lo_, hi_ = grid[i - 1], grid[i]
    return 0.5 * (lo_ + hi_)


def test_constant_weights_problem():
    p = build_problem(make_model(A=3.0, B=2.0))
    assert p.mu_A_bar == 3.0
    assert np.allclose(p.pmf, stats.poisson.pmf(np.arange(p.K + 1), 2.0), atol=1e-15)


def test_two_point_mu_A_bar():
    p = build_problem(make_model(A=DiscreteWeightLaw.two_point(1.0, 2.0)))
    assert p.mu_A_bar == pytest.approx(5 / 3, abs=1e-15)


def test_zero_group_weight_rejected():
    with pytest.raises(ModelError):
        build_problem(make_model(B=0.0))


def test_truncation_tail():
    p = build_problem(make_model(A=2.0, B=DiscreteWeightLaw.two_point(0.5, 6.0)))
    assert 1 - 1e-8 <= p.pmf.sum() <= 1 + 1e-12
    assert abs(p.gamma.sum() - p.mu_A_bar * p.mu_B_bar) < 1e-8
    assert np.all(p.gamma >= 0)


def test_value_at_zero_is_mean_offspring():
    p = build_problem(make_model(A=2.0, B=1.5))
    assert abs(evaluate_lotka(p, 0.0) - 2.0 * 1.5) < 1e-8


def test_value_vanishes_at_large_lambda():
    assert evaluate_lotka(build_problem(make_model()), 1e8) < 1e-6


def test_toy_value():
    assert evaluate_lotka(toy_problem(), 1.0) == pytest.approx(1.0, abs=1e-15)


def test_toy_solution():
    res = solve_malthusian(toy_problem())
    assert abs(res.alpha - 1.0) < 1e-8
    assert abs(res.beta - 0.5) < 1e-6
    assert res.r_star == 2.0


def test_subcritical_returns_none():
    res = solve_malthusian(build_problem(make_model(A=0.8, B=1.0)))
    assert res.alpha is None and "subcritical" in res.reason
    assert res.r_star == pytest.approx(0.8, abs=1e-8)


def test_explosive_returns_none(rng):
    atom = DiscreteWeightLaw.two_point(0.0, 1.0, 0.6)
    p = build_problem(make_model(A=2.0, B=1.0, T=atom), n_samples=2000, rng=rng)
    res = solve_malthusian(p)
    assert res.alpha is None and "explosive" in res.reason


def test_grid_scan_oracle():
    p = build_problem(make_model(A=2.0, B=1.0))
    res = solve_malthusian(p)
    assert abs(res.alpha - grid_root(p)) < 1e-6
    assert abs(evaluate_lotka(p, res.alpha) - 1) < 1e-8


def test_strictly_decreasing():
    p = build_problem(make_model(A=2.0, B=1.0))
    vals = [evaluate_lotka(p, x) for x in np.linspace(0, 20, 50)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_truncation_stability():
    model = make_model(A=2.0, B=1.0)
    p = build_problem(model)
    a = solve_malthusian(p).alpha
    b = solve_malthusian(build_problem(model, K=p.K + 10)).alpha
    assert abs(a - b) < 2e-8


def test_geometric_identity():
    p = build_problem(make_model(A=3.0, B=0.5))
    alpha = solve_malthusian(p).alpha
    head, q = secondary_series(p, alpha)
    assert q < 1
    closed = head / (1 - q)
    sums = geometric_partial_sums(p, alpha, 60)
    for N in (0, 5, 20, 60):
        assert 0 <= closed - sums[N] <= head * q ** (N + 1) / (1 - q) + 1e-15
    assert closed == pytest.approx(1.0, abs=1e-8)


def test_mean_age_positive_and_stable():
    p = build_problem(make_model(A=3.0, B=0.5))
    alpha = solve_malthusian(p).alpha
    betas = [mean_age_childbearing(p, alpha, h) for h in (1e-3, 1e-4, 1e-5)]
    assert min(betas) > 0
    assert max(betas) - min(betas) < 5e-4 * max(betas)


def test_mean_age_toy_by_hand():
    assert mean_age_childbearing(toy_problem(), 1.0) == pytest.approx(0.5, abs=1e-6)


def test_criticality_coherence(rng):
    for _ in range(50):
        a = rng.uniform(0.1, 3.0, 2)
        b = rng.uniform(0.1, 3.0, 2)
        model = make_model(A=DiscreteWeightLaw.two_point(a.min(), a.max()),
                           B=DiscreteWeightLaw.two_point(b.min(), b.max()),
                           T=ExponentialLaw(1 / rng.uniform(0.5, 2)))
        p = build_problem(model)
        res = solve_malthusian(p)
        r0 = model.mu_A_bar * model.mu_B_bar
        assert (r0 > 1) == (res.alpha is not None)
        if res.alpha is None:
            # no root anywhere: the function starts at or below one and only decreases
            assert max(evaluate_lotka(p, x) for x in np.linspace(0, 5, 20)) <= 1 + 1e-8
        else:
            assert abs(evaluate_lotka(p, res.alpha) - 1) < 1e-8


def test_non_monotone_transforms_rejected():
    wiggle = LotkaProblem(mu_A_bar=3.0, pmf=np.array([0.0, 1.0]),
                          laplace=lambda lam: np.array([min(1.0, 1 / (1 + lam)
                                                            + 0.2 * math.sin(5 * lam) ** 2)]))
    with pytest.raises(ArithmeticError, match="n_samples"):
        solve_malthusian(wiggle)


def test_monte_carlo_route_matches_closed_form(rng):
    model = make_model(A=2.0, B=1.0)
    exact = solve_malthusian(build_problem(model)).alpha
    mc = solve_malthusian(build_problem(model, n_samples=20_000, rng=rng, exact=False))
    assert mc.method == "monte-carlo"
    assert abs(mc.alpha - exact) < 0.02


def test_gamma_pairs_with_next_clique_size():
    # one clique with two secondaries: the Lotka sum uses the size-3 transform
    p = LotkaProblem(mu_A_bar=1.0, pmf=np.array([0.0, 0.0, 1.0]),
                     laplace=lambda lam: np.array([exact_laplace_exponential(k, 1.0, lam)
                                                   for k in (2, 3)]))
    assert evaluate_lotka(p, 2.0) == pytest.approx(2 * 0.375, abs=1e-15)
