import math

import numpy as np
import pytest
from scipy import stats

from rigepi.coupling import (MISCOUPLING_KINDS, NO_MISCOUPLING, birthday_bound,
                             birthday_bound_check, comonotone_poisson_tv, coupling_experiment,
                             coupling_exponent, horizon_target, poisson_quantile, run_coupled,
                             scaling_factor_tv_check, tv_rate_experiment)
from rigepi.weights import DiscreteWeightLaw, EmpiricalWeights, ExponentialLaw, poisson_tv

from conftest import make_model


def test_gamma_formula():
    assert coupling_exponent(2.0) == 0.25
    assert coupling_exponent(2.5) == 0.4
    assert coupling_exponent(4.0) == 0.5
    assert coupling_exponent(math.inf) == 0.5
    with pytest.raises(ValueError):
        coupling_exponent(1.5)


def test_horizon_target_offset():
    n = 10**5
    assert horizon_target(n) == pytest.approx(n**0.5 * math.exp(-2), rel=1e-12)


def test_poisson_quantile_matches_scipy(rng):
    for lam in (0.0, 0.3, 2.0, 17.0, 45.0):
        for u in rng.random(200):
            expected = 0 if lam == 0 else int(stats.poisson.ppf(u, lam))
            assert poisson_quantile(u, lam) == expected


def test_comonotone_tv_against_simulation(rng):
    x = DiscreteWeightLaw.two_point(1.0, 2.0)
    y = DiscreteWeightLaw.from_atoms([(1.0, 0.4), (2.0, 0.5), (3.0, 0.1)])
    u = rng.random(200_000)
    sim = np.mean([poisson_tv(a, b) for a, b in zip(x.ppf(u[:20_000]), y.ppf(u[:20_000]))])
    assert comonotone_poisson_tv(x, y) == pytest.approx(sim, abs=0.01)
    assert comonotone_poisson_tv(x, x) == 0.0


# --- birthday bound -------------------------------------------------------------------

def test_birthday_single_draw(rng):
    assert birthday_bound_check(EmpiricalWeights(np.ones(10)), 1, 100, rng).empirical == 0.0


def test_classical_birthday(rng):
    res = birthday_bound_check(EmpiricalWeights(np.ones(365)), 23, 100_000, rng)
    exact = 1 - math.prod((365 - i) / 365 for i in range(23))
    assert abs(exact - 0.507) < 0.001
    assert abs(res.empirical - 0.507) < 0.02


def test_union_bound_dominates(rng):
    for _ in range(50):
        n = int(rng.integers(20, 2000))
        w = EmpiricalWeights(rng.gamma(rng.uniform(0.3, 3), size=n))
        j = int(rng.integers(2, max(3, int(math.sqrt(n)))))
        res = birthday_bound_check(w, j, 10_000, rng)
        assert res.empirical <= res.bound + 3 * res.stderr


def test_union_bound_formula():
    w = EmpiricalWeights(np.array([1.0, 2.0, 3.0]))
    assert birthday_bound(w, 4) == pytest.approx(4 * 3 * 14 / (2 * 36))


def test_square_root_threshold(rng):
    law = DiscreteWeightLaw.two_point(1.0, 2.0)
    slow, fast = [], []
    for n in (10**3, 10**4, 10**5):
        w = EmpiricalWeights(np.asarray(law.sample(rng, n), dtype=float))
        slow.append(birthday_bound_check(w, int(n**0.4), 20_000, rng).empirical)
        fast.append(birthday_bound_check(w, int(n**0.6), 2000, rng).empirical)
    assert slow[0] > slow[1] > slow[2] and slow[2] < 0.1
    assert min(fast) > 0.5 and fast[2] >= fast[0]


# --- TV rates ---------------------------------------------------------------------------

def test_point_mass_rate_is_zero(rng):
    res = tv_rate_experiment(DiscreteWeightLaw.constant(2.0), math.inf, [100, 1000], 3, rng)
    assert np.all(res.mean == 0)


def test_two_point_rate(rng):
    grid = [100, 1000, 10_000, 100_000]
    res = tv_rate_experiment(DiscreteWeightLaw.two_point(1.0, 2.0), math.inf, grid, 30, rng)
    assert res.slope <= -0.4
    assert res.mean[2] < 1e4 ** (-0.5 + 0.1)


def test_scaling_constant_A(rng):
    res = scaling_factor_tv_check(make_model(A=1.0, B=DiscreteWeightLaw.two_point(1.0, 2.0)),
                                  [100, 1000], 3, rng)
    assert np.all(res.clique_size_tv == 0)


def test_scaling_two_point(rng):
    grid = np.array([100, 1000, 10_000, 100_000])
    res = scaling_factor_tv_check(make_model(A=DiscreteWeightLaw.two_point(1.0, 2.0), B=1.0),
                                  grid, 30, rng)
    assert res.clique_size_tv[2] < 10**-1.5
    assert np.all(np.diff(res.clique_size_tv) < 0)
    assert np.all(res.clique_size_tv < grid ** (-0.5 + 0.1))
    # constant B with n mu_A / mu_B integral: the vertex-side factor is exactly one
    assert np.all(res.vertex_degree_tv == 0)


def test_scaling_random_group_weights(rng):
    grid = np.array([100, 1000, 10_000, 100_000])
    model = make_model(A=DiscreteWeightLaw.two_point(1.0, 2.0), B=DiscreteWeightLaw.two_point(0.5, 1.5))
    res = scaling_factor_tv_check(model, grid, 30, rng)
    for series in (res.clique_size_tv, res.vertex_degree_tv):
        assert np.all(np.diff(series) < 0)
        assert np.all(series < grid ** (-0.5 + 0.1))


# --- coupled runs ------------------------------------------------------------------------

def test_tiny_graph_diverges_fast(rng):
    reps = [run_coupled(make_model(A=1.0, B=1.0), 2, math.inf, rng) for _ in range(200)]
    diverged = [r for r in reps if r.infections_at_divergence is not None]
    assert len(diverged) > 0.3 * len(reps)
    assert all(r.infections_at_divergence <= 2 for r in diverged)


def test_report_invariants(rng):
    model = make_model()
    for _ in range(50):
        r = run_coupled(model, 5000, math.inf, rng, max_infections=500)
        assert r.miscoupling_kind in MISCOUPLING_KINDS + (NO_MISCOUPLING,)
        if r.infections_at_divergence is not None:
            assert r.infections_at_divergence <= r.total_infections
        else:
            assert r.miscoupling_kind == NO_MISCOUPLING


def test_shared_randomness_fidelity(rng):
    model = make_model(A=DiscreteWeightLaw.two_point(1.0, 3.0), B=1.0, I=ExponentialLaw(2.0))
    compared = 0
    for _ in range(100):
        r = run_coupled(model, 20_000, math.inf, rng, max_infections=300)
        assert r.fidelity_ok
        compared += r.cliques_compared
        if r.infections_at_divergence is None:
            assert r.max_time_discrepancy == 0.0
    assert compared > 1000


def test_rejects_tiny_n(rng):
    with pytest.raises(ValueError):
        run_coupled(make_model(), 1, math.inf, rng)


def test_experiment_is_deterministic():
    model = make_model()
    kw = dict(max_infections=200, stop_at_divergence=True)
    a = coupling_experiment(model, [2000], 6, 11, **kw)
    b = coupling_experiment(model, [2000], 6, 11, workers=2, **kw)
    assert a == b
    assert [r["rep"] for r in a] == list(range(6))
