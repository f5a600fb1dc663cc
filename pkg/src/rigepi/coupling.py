"""Coupling of the graph epidemic with its branching-process approximation.

:func:`run_coupled` grows the epidemic's graph lazily: a vertex is explored
when it becomes infected.  Every count and size-biased pick is made from one
uniform, which the shadow branching process reuses through the true laws
(comonotone coupling), and both sides share every clique's infectious
periods and contact times.  The run records the first draw at which the two
stop agreeing.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .branching import OffspringLaws
from .graph import REPEATED_GROUP, REPEATED_VERTEX, REVISITED_EXPLORED, Explorer, group_count
from .kernel import clique_passage, draw_clique
from .replicas import replica_rng, run_replicas
from .weights import DiscreteWeightLaw, EmpiricalWeights, WeightModel, poisson_tv

COUNT_MISMATCH = "count-mismatch"
NO_MISCOUPLING = "none"
MISCOUPLING_KINDS = (REPEATED_GROUP, REPEATED_VERTEX, REVISITED_EXPLORED, COUNT_MISMATCH)


def coupling_exponent(q: float) -> float:
    """gamma = min(1/2, (q - 3/2) / q) for a finite q-th moment of the weights."""
    if math.isinf(q):
        return 0.5
    if q < 2:
        raise ValueError("need q >= 2")
    return min(0.5, (q - 1.5) / q)


def default_eps(n: int) -> float:
    return 2.0 / math.log(n)


def horizon_target(n: int, q: float = math.inf, eps: float | None = None) -> float:
    eps = default_eps(n) if eps is None else eps
    return n ** (coupling_exponent(q) - eps)


def poisson_quantile(u: float, lam: float) -> int:
    """Smallest k with P(Po(lam) <= k) >= u."""
    if lam <= 0:
        return 0
    if lam > 30:
        return int(stats.poisson.ppf(u, lam))
    p = math.exp(-lam)
    c = p
    k = 0
    while c < u and k < 1000:
        k += 1
        p *= lam / k
        c += p
    return k


class CoupledExplorer(Explorer):
    """Explorer whose draws also drive a shadow branching process."""

    def __init__(self, model: WeightModel, n: int, rng, seed_vertex=None):
        super().__init__(model, n, rng, seed_vertex)
        self.laws = OffspringLaws.of(model)
        self.abar: dict[int, float] = {}  # shadow intensity of discovered vertices
        self.bbar: dict[int, float] = {}  # shadow intensity of drawn groups
        self.shadow_k: dict[int, int] = {}
        self.tv_vertex: list[float] = []
        self.tv_group: list[float] = []

    def _pair(self, lam_graph: float, lam_shadow: float, v: int, tv_log: list) -> int:
        u = self.rng.random()
        d_graph = poisson_quantile(u, lam_graph)
        d_shadow = poisson_quantile(u, lam_shadow)
        tv_log.append(poisson_tv(lam_graph, lam_shadow))
        if d_graph != d_shadow:
            self._flag(COUNT_MISMATCH, v, d_graph)
        return d_graph, d_shadow

    def _group_draws(self, v: int) -> list[int]:
        if not self.m:
            return []
        a = float(self.A.values[v])
        shadow = a if v == self.state.seed else self.abar[v]
        d, _ = self._pair(a * self.vertex_factor, shadow, v, self.tv_vertex)
        groups = []
        for _ in range(d):
            u = self.rng.random()
            g = int(self.B.size_biased_quantile(u))
            self.bbar.setdefault(g, float(self.laws.law_B_bar.ppf(u)))
            groups.append(g)
        return groups

    def _member_draws(self, g: int) -> list[int]:
        b = float(self.B.values[g])
        d, d_shadow = self._pair(b * self.group_factor, self.bbar[g], g, self.tv_group)
        self.shadow_k[g] = d_shadow
        out = []
        for _ in range(d):
            u = self.rng.random()
            w = int(self.A.size_biased_quantile(u))
            self.abar.setdefault(w, float(self.laws.law_A_bar.ppf(u)))
            out.append(w)
        return out


@dataclass
class CouplingReport:
    n: int
    gamma: float
    eps: float
    horizon_target: float
    infections_at_divergence: int | None
    miscoupling_kind: str
    total_infections: int
    extinct: bool
    fidelity_ok: bool  # shadow clique stream equals the graph's before divergence
    cliques_compared: int
    max_time_discrepancy: float
    tv_estimates: dict = field(default_factory=dict)

    @property
    def reached_horizon(self) -> bool:
        """Coupled for ``horizon_target`` infections, or never decoupled at all."""
        if self.infections_at_divergence is None:
            return True
        return self.infections_at_divergence > self.horizon_target

    def reached(self, count: float) -> bool:
        if self.infections_at_divergence is None:
            return True
        return self.infections_at_divergence > count


def run_coupled(model: WeightModel, n: int, t_max: float, rng, max_infections: int | None = None,
                stop_at_divergence: bool = False, q: float = math.inf, eps: float | None = None,
                seed_vertex: int | None = None) -> CouplingReport:
    """Epidemic on a lazily explored graph, compared draw by draw with a branching process.

    ``infections_at_divergence`` is the number of infections (the vertex being
    explored included) when the first miscoupling is recorded.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    model.validate()
    model.check_growth_assumption()
    law_I, law_T = model.law_I, model.law_T
    ex = CoupledExplorer(model, n, rng, seed_vertex)
    s = ex.state.seed
    period = {s: float(law_I.sample(rng))}
    pair_T: dict[tuple[int, int], float] = {}
    adj: dict[int, list] = {}
    tentative = {s: 0.0}
    settled: dict[int, float] = {}
    shadow_birth = {s: 0.0}
    heap = [(0.0, s)]
    divergence = None
    kind = NO_MISCOUPLING
    fidelity = True
    compared = 0
    max_disc = 0.0
    limit = max_infections if max_infections is not None else n
    while heap:
        d, u = heapq.heappop(heap)
        if u in settled:
            continue
        if d > t_max:
            break
        settled[u] = d
        if divergence is None and u in shadow_birth:
            max_disc = max(max_disc, abs(d - shadow_birth[u]))
        opened = ex.explore(u)
        if divergence is None and ex.state.events:
            divergence = len(settled)
            kind = ex.state.events[0].kind
        for c in opened:
            members = c.members
            k = len(members) - 1
            if k == 0:
                continue
            I_sec, T = draw_clique(k, law_I, law_T, rng)
            for j, w in enumerate(members[1:]):
                period.setdefault(w, float(I_sec[j]))
            I_graph = np.array([period[w] for w in members])
            T_graph = np.zeros((k + 1, k + 1))
            for a, x in enumerate(members):
                ix = period[x]
                row = adj.setdefault(x, [])
                for b, y in enumerate(members):
                    if a == b:
                        continue
                    t = pair_T.setdefault((x, y), float(T[a, b]))
                    T_graph[a, b] = t
                    row.append((y, t if t <= ix else math.inf))
            if divergence is None:
                shadow = clique_passage(np.concatenate([[period[u]], I_sec]), T)
                graph_side = clique_passage(I_graph, T_graph)
                compared += 1
                if ex.shadow_k.get(c.group) != k or shadow != graph_side:
                    fidelity = False
                for j, w in enumerate(members[1:]):
                    shadow_birth.setdefault(w, d + shadow[j + 1])
        if len(settled) >= limit or (stop_at_divergence and divergence is not None):
            break
        for w, wt in adj.get(u, ()):
            if wt == math.inf or w in settled:
                continue
            nd = d + wt
            if nd < tentative.get(w, math.inf):
                tentative[w] = nd
                heapq.heappush(heap, (nd, w))
    extinct = not heap and divergence is None and len(settled) < limit
    tv = {"vertex_degree": float(np.mean(ex.tv_vertex)) if ex.tv_vertex else 0.0,
          "clique_size": float(np.mean(ex.tv_group)) if ex.tv_group else 0.0}
    e = default_eps(n) if eps is None else eps
    return CouplingReport(n=n, gamma=coupling_exponent(q), eps=e, horizon_target=horizon_target(n, q, e),
                          infections_at_divergence=divergence, miscoupling_kind=kind,
                          total_infections=len(settled), extinct=extinct, fidelity_ok=fidelity,
                          cliques_compared=compared, max_time_discrepancy=max_disc, tv_estimates=tv)


def _coupled_task(args) -> dict:
    model, n, rep, base_seed, kwargs = args
    rng = replica_rng(base_seed, f"coupling-n{n}", rep)
    r = run_coupled(model, n, math.inf, rng, **kwargs)
    return {"n": n, "rep": rep, "infections_at_divergence": r.infections_at_divergence,
            "miscoupling_kind": r.miscoupling_kind, "total_infections": r.total_infections,
            "extinct": r.extinct, "horizon_target": r.horizon_target,
            "reached_horizon": r.reached_horizon, "fidelity_ok": r.fidelity_ok,
            "tv_vertex_degree": r.tv_estimates["vertex_degree"],
            "tv_clique_size": r.tv_estimates["clique_size"]}


def coupling_experiment(model: WeightModel, n_values, n_reps: int, base_seed: int,
                        workers: int = 1, **kwargs) -> list[dict]:
    """One row per (n, replica); each replica has its own derived stream."""
    tasks = [(model, int(n), rep, base_seed, kwargs) for n in n_values for rep in range(n_reps)]
    return run_replicas(_coupled_task, tasks, workers)


@dataclass(frozen=True)
class BirthdayResult:
    empirical: float
    bound: float
    stderr: float


def birthday_bound(weights: EmpiricalWeights, j_n: int) -> float:
    """Union bound (j-1) j sum A^2 / (2 (sum A)^2) on a repeat among j size-biased draws."""
    s2 = math.fsum(weights.values ** 2)
    return (j_n - 1) * j_n * s2 / (2.0 * weights.sum ** 2)


def birthday_bound_check(weights: EmpiricalWeights, j_n: int, n_reps: int, rng,
                         chunk_entries: int = 2_000_000) -> BirthdayResult:
    """Frequency of a repeated index among ``j_n`` size-biased draws."""
    if j_n <= 1:
        return BirthdayResult(0.0, 0.0, 0.0)
    hits = 0
    left = n_reps
    rows = max(1, chunk_entries // j_n)
    while left > 0:
        r = min(rows, left)
        draws = np.sort(weights.alias.sample(rng, (r, j_n)), axis=1)
        hits += int(np.count_nonzero((draws[:, 1:] == draws[:, :-1]).any(axis=1)))
        left -= r
    p = hits / n_reps
    return BirthdayResult(p, birthday_bound(weights, j_n), math.sqrt(p * (1 - p) / n_reps))


def comonotone_poisson_tv(x: DiscreteWeightLaw, y: DiscreteWeightLaw) -> float:
    """E d_TV(Po(X), Po(Y)) with X, Y driven by one uniform through their quantiles."""
    cx = np.cumsum(x.probs)
    cy = np.cumsum(y.probs)
    cx[-1] = cy[-1] = 1.0
    cuts = np.union1d(np.concatenate([[0.0], cx]), cy)
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    widths = np.diff(cuts)
    xv = x.ppf(mids)
    yv = y.ppf(mids)
    cache: dict[tuple[float, float], float] = {}
    total = 0.0
    for a, b, wdt in zip(np.atleast_1d(xv).tolist(), np.atleast_1d(yv).tolist(), widths.tolist()):
        if wdt <= 0 or a == b:
            continue
        key = (a, b)
        if key not in cache:
            cache[key] = poisson_tv(a, b)
        total += wdt * cache[key]
    return total


@dataclass
class RateResult:
    n_grid: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    slope: float
    gamma: float


def _loglog_slope(n_grid, mean) -> float:
    pos = mean > 0
    if pos.sum() < 2:
        return 0.0
    return float(stats.linregress(np.log(n_grid[pos]), np.log(mean[pos])).slope)


def tv_rate_experiment(law_A: DiscreteWeightLaw, q: float, n_grid, n_reps: int, rng) -> RateResult:
    """Mean d_TV(Po(Abar), Po(Abar_(n))) under the comonotone coupling, per n.

    ``Abar_(n)`` is the size-biased empirical law of n draws from ``law_A``.
    The expectation over the coupling is computed exactly; only the draws
    of A_1..A_n are random.
    """
    n_grid = np.asarray(n_grid, dtype=int)
    target = law_A.size_biased()
    vals = np.zeros((n_grid.size, n_reps))
    for i, n in enumerate(n_grid):
        for r in range(n_reps):
            emp = EmpiricalWeights(np.asarray(law_A.sample(rng, int(n)), dtype=float))
            vals[i, r] = comonotone_poisson_tv(target, emp.size_biased_law())
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n_reps) if n_reps > 1 else np.zeros(n_grid.size)
    return RateResult(n_grid, mean, se, _loglog_slope(n_grid, mean), coupling_exponent(q))


def _scaled_tv(weights: np.ndarray, factor: float) -> float:
    """E d_TV(Po(X f), Po(X)) for X size-biased from ``weights``."""
    vals, counts = np.unique(weights, return_counts=True)
    mass = vals * counts
    total = mass.sum()
    return math.fsum(m / total * poisson_tv(v * factor, v) for v, m in zip(vals, mass) if m > 0)


@dataclass
class ScalingResult:
    n_grid: np.ndarray
    clique_size_tv: np.ndarray  # Po(Bbar_(n) * mean(A)/mu_A) against Po(Bbar_(n))
    vertex_degree_tv: np.ndarray  # Po(Abar_(n) * sum(B)/(n mu_A)) against Po(Abar_(n))


def scaling_factor_tv_check(model: WeightModel, n_grid, n_reps: int, rng) -> ScalingResult:
    """Cost of the finite-n intensity factors in the exploration's Poisson draws."""
    n_grid = np.asarray(n_grid, dtype=int)
    c_tv = np.zeros((n_grid.size, n_reps))
    v_tv = np.zeros((n_grid.size, n_reps))
    mu_A = model.mu_A
    for i, n in enumerate(n_grid):
        m = group_count(int(n), mu_A, model.mu_B)
        for r in range(n_reps):
            A = np.asarray(model.law_A.sample(rng, int(n)), dtype=float)
            B = np.asarray(model.law_B.sample(rng, m), dtype=float)
            c_tv[i, r] = _scaled_tv(B, A.sum() / (n * mu_A))
            v_tv[i, r] = _scaled_tv(A, B.sum() / (n * mu_A))
    return ScalingResult(n_grid, c_tv.mean(axis=1), v_tv.mean(axis=1))
