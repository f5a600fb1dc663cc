"""Euler-Lotka equation for the Malthusian growth rate.

The expected discounted offspring of a typical (non-root) case is
``sum_k gamma_k * L_{k+1}(lam)``, where ``gamma_k = mu_Abar * k * P(MP(Bbar) = k)``
and ``L_{k+1}`` is the transform of the passage time in a clique of size
``k + 1`` (k secondaries plus the primary).  The growth rate alpha solves
that sum = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .kernel import KernelCache, exact_laplace_exponential, is_exact_family
from .weights import ModelError, WeightModel

TAIL_TOL = 1e-8
_K_LIMIT = 20_000


@dataclass(frozen=True, eq=False)
class LotkaProblem:
    """``laplace(lam)`` returns transforms for clique sizes 2..K+1."""

    mu_A_bar: float
    pmf: np.ndarray  # P(MP(Bbar) = k) for k = 0..K
    laplace: Callable[[float], np.ndarray]
    p_T0: float = 0.0
    mu_B_bar: float | None = None
    exact: bool = True
    stderr: Callable[[float], np.ndarray] | None = None

    @property
    def K(self) -> int:
        return len(self.pmf) - 1

    @property
    def gamma(self) -> np.ndarray:
        k = np.arange(1, self.K + 1)
        return self.mu_A_bar * k * self.pmf[1:]

    @property
    def mean_secondaries(self) -> float:
        if self.mu_B_bar is not None:
            return self.mu_B_bar
        return float(np.dot(np.arange(self.K + 1), self.pmf))


def evaluate_lotka(problem: LotkaProblem, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    L = np.asarray(problem.laplace(lam), dtype=float)
    return math.fsum(problem.gamma * L)


def choose_truncation(mu_A_bar: float, law_Bbar, mu_B_bar: float, tail_tol: float = TAIL_TOL):
    """Smallest K whose omitted Gamma mass is below ``tail_tol``; returns (K, pmf[0..K])."""
    kmax = max(16, int(4 * mu_B_bar) + 16)
    while True:
        pmf = law_Bbar.mp_pmf(kmax)
        k = np.arange(kmax + 1)
        partial = np.cumsum(k * pmf)
        tail = mu_A_bar * (mu_B_bar - partial)
        ok = np.nonzero(tail < tail_tol)[0]
        if ok.size:
            K = max(1, int(ok[0]))
            return K, pmf[:K + 1].copy()
        if kmax >= _K_LIMIT:
            raise ModelError("clique-size law has too heavy a tail to truncate")
        kmax *= 2


def build_problem(model: WeightModel, K: int | None = None, n_samples: int = 100_000, rng=None,
                  tail_tol: float = TAIL_TOL, cache: KernelCache | None = None,
                  exact: bool | None = None) -> LotkaProblem:
    """Assemble the pmf, Gamma and transform evaluator for ``model``.

    Transforms come in closed form for I = inf with exponential T, otherwise
    from Monte Carlo passage samples reused for every lambda.
    """
    model.validate()
    mu_A_bar = model.mu_A_bar
    law_Bbar = model.law_B.size_biased()
    mu_B_bar = model.mu_B_bar
    if K is None:
        K, pmf = choose_truncation(mu_A_bar, law_Bbar, mu_B_bar, tail_tol)
    else:
        pmf = law_Bbar.mp_pmf(K)
    if exact is None:
        exact = is_exact_family(model.law_I, model.law_T)
    if exact:
        beta = model.law_T.rate
        sizes = range(2, K + 2)

        def laplace(lam):
            return np.array([exact_laplace_exponential(k, beta, lam) for k in sizes])

        stderr = None
    else:
        if cache is None:
            if rng is None:
                raise ValueError("Monte Carlo transforms need an rng or a kernel cache")
            cache = KernelCache(model.law_I, model.law_T, n_samples, rng)

        def laplace(lam):
            return cache.transforms(K, lam)

        def stderr(lam):
            return cache.stderrs(K, lam)

    return LotkaProblem(mu_A_bar=mu_A_bar, pmf=pmf, laplace=laplace, p_T0=model.p_T0,
                        mu_B_bar=mu_B_bar, exact=exact, stderr=stderr)


@dataclass
class MalthusianResult:
    alpha: float | None
    r_star: float
    beta: float | None = None
    bracket: tuple[float, float] | None = None
    iterations: int = 0
    reason: str = ""
    tol: float = 0.0
    method: str = "exact"
    residual: float | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self, K: int) -> dict:
        return {"alpha": self.alpha, "r_star": self.r_star, "beta": self.beta, "K": K,
                "tol": self.tol, "method": self.method}


def lotka_tolerance(problem: LotkaProblem, lam: float, tol: float) -> float:
    """Exact transforms use ``tol``; Monte Carlo ones 3 propagated standard errors."""
    if problem.exact or problem.stderr is None:
        return tol
    se = np.asarray(problem.stderr(lam))
    return max(tol, 3.0 * math.sqrt(float(np.sum((problem.gamma * se) ** 2))))


def solve_malthusian(problem: LotkaProblem, tol: float = 1e-8, hi_limit: float = 1e8,
                     check_grid: int = 50) -> MalthusianResult:
    """Root of ``evaluate_lotka(problem, lam) = 1`` on lam > 0, or None with a reason."""
    method = "exact" if problem.exact else "monte-carlo"
    f = lambda lam: evaluate_lotka(problem, lam) - 1.0  # noqa: E731
    r_star = evaluate_lotka(problem, 0.0)
    mean_offspring = problem.mu_A_bar * problem.mean_secondaries
    if problem.p_T0 * mean_offspring >= 1.0:
        return MalthusianResult(None, r_star, reason="explosive: P(T'=0) too large", method=method)
    if r_star <= 1.0:
        return MalthusianResult(None, r_star, reason="subcritical: no growth", method=method)

    hi = 1.0
    while f(hi) >= 0.0:
        hi *= 2.0
        if hi > hi_limit:
            raise ArithmeticError("could not bracket the growth rate")

    grid = np.linspace(0.0, hi, check_grid)
    vals = np.array([f(x) for x in grid])
    if np.any(np.diff(vals) > 0):
        raise ArithmeticError("Lotka function is not monotone; increase n_samples")

    alpha, info = optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                  maxiter=500, full_output=True)
    residual = abs(f(alpha))
    used_tol = lotka_tolerance(problem, alpha, tol)
    if residual >= used_tol:
        raise ArithmeticError(f"root residual {residual:g} exceeds tolerance {used_tol:g}")
    res = MalthusianResult(alpha=float(alpha), r_star=r_star, bracket=(0.0, hi),
                           iterations=info.iterations, tol=used_tol, method=method,
                           residual=residual)
    res.beta = mean_age_childbearing(problem, res.alpha)
    return res


def secondary_series(problem: LotkaProblem, lam: float) -> tuple[float, float]:
    """(gamma_1 L_2, q) where q is the size-3-and-up part of the Lotka sum."""
    L = np.asarray(problem.laplace(lam), dtype=float)
    g = problem.gamma
    return float(g[0] * L[0]), math.fsum(g[1:] * L[1:])


def geometric_partial_sums(problem: LotkaProblem, lam: float, N: int) -> np.ndarray:
    """Partial sums of gamma_1 L_2 * sum_{j<=n} q^j for n = 0..N."""
    head, q = secondary_series(problem, lam)
    return head * np.cumsum(q ** np.arange(N + 1))


def s_transform(problem: LotkaProblem, lam: float) -> float:
    """Closed form head / (1 - q) of the geometric series (needs q < 1)."""
    head, q = secondary_series(problem, lam)
    if q >= 1.0:
        return math.inf
    return head / (1.0 - q)


def mean_age_childbearing(problem: LotkaProblem, alpha: float, h: float = 1e-4) -> float:
    """-S'(alpha) by central difference."""
    lo = max(alpha - h, 0.0)
    hi = alpha + h
    d = (s_transform(problem, hi) - s_transform(problem, lo)) / (hi - lo)
    beta = -d
    if not math.isfinite(beta):
        raise ArithmeticError("mean age at childbearing is not finite")
    return beta
