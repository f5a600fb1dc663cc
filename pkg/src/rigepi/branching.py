"""Multitype branching process that approximates the early epidemic.

An individual with infectious period I is the primary case of MP(Abar)
cliques (MP(A) for an ordinary root); each clique holds MP(Bbar) secondaries
whose birth offsets are within-clique passage times from the same clique
engine the epidemic uses.  A child born through a clique of size 2 has type
theta; such children anchor blocks, and the theta individuals split into
embedded generations J_0, J_1, ...
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .epidemic import GrowthEstimate, fit_count_window
from .kernel import clique_passage, draw_clique
from .weights import WeightLaw, WeightModel

ROOT_GENERAL = "general"
ROOT_THETA = "theta"


@dataclass(frozen=True)
class CliqueOffspring:
    """One clique opened by a primary case: k secondaries with passage times."""

    k: int
    passage: tuple  # per secondary, inf when never reached
    periods: tuple  # infectious period drawn for each secondary


@dataclass(frozen=True, eq=False)
class OffspringLaws:
    """Laws used for reproduction, with the size-biased ones precomputed."""

    model: WeightModel
    law_A_bar: WeightLaw
    law_B_bar: WeightLaw

    @classmethod
    def of(cls, model: WeightModel) -> "OffspringLaws":
        return cls(model, model.law_A.size_biased(), model.law_B.size_biased())


def open_clique(k: int, primary_period: float, laws: OffspringLaws, rng) -> CliqueOffspring:
    """Simulate one clique with the primary's infectious period pinned."""
    if k == 0:
        return CliqueOffspring(0, (), ())
    model = laws.model
    I_sec, T = draw_clique(k, model.law_I, model.law_T, rng)
    I_all = np.concatenate([[primary_period], I_sec])
    dist = clique_passage(I_all, T)
    return CliqueOffspring(k, tuple(dist[1:]), tuple(I_sec.tolist()))


def reproduce(period: float, laws: OffspringLaws, rng, root: bool = False) -> list[CliqueOffspring]:
    """Cliques opened by a primary case with infectious period ``period``."""
    law = laws.model.law_A if root else laws.law_A_bar
    n_cliques = int(rng.poisson(law.sample(rng)))
    out = []
    for _ in range(n_cliques):
        k = int(rng.poisson(laws.law_B_bar.sample(rng)))
        out.append(open_clique(k, period, laws, rng))
    return out


@dataclass(eq=False)
class BranchingRun:
    parent: np.ndarray  # -1 for the root
    birth: np.ndarray
    theta: np.ndarray  # born through a clique of size 2 (the root counts as theta
    #                    only under the theta-root convention)
    period: np.ndarray
    generation: np.ndarray
    block_root: np.ndarray
    embedded_generation: np.ndarray  # -1 unless the individual anchors a block
    t_max: float
    t_end: float  # the population is complete on [0, t_end)
    extinct: bool
    truncated: bool
    root_kind: str
    W_hat: np.ndarray | None = None
    cliques: list = field(default_factory=list)  # (parent id, CliqueOffspring) in order

    @property
    def size(self) -> int:
        return self.birth.size

    def alive_count(self, t):
        """#{u: birth_u <= t < birth_u + I_u}."""
        births = np.sort(self.birth)
        deaths = np.sort(self.birth + self.period)
        t = np.asarray(t, dtype=float)
        return (np.searchsorted(births, t, side="right")
                - np.searchsorted(deaths, t, side="right"))

    def event_counts(self):
        """Alive count right after every birth or death up to ``t_end``."""
        births = self.birth[self.birth < self.t_end] if self.truncated else self.birth
        deaths = self.birth + self.period
        times = np.concatenate([births, deaths[deaths < self.t_end]])
        kind = np.concatenate([np.zeros(births.size), np.ones(times.size - births.size)])
        order = np.lexsort((kind, times))
        delta = np.where(kind[order] == 0, 1, -1)
        return times[order], np.cumsum(delta), np.cumsum(delta > 0)


def run_branching(model: WeightModel, t_max: float, cap: int, rng, root: str = ROOT_GENERAL,
                  alpha: float | None = None, max_embedded_generation: int | None = None,
                  keep_cliques: bool = False) -> BranchingRun:
    """Expand the process in order of birth time.

    Individuals are reproduced in (birth time, id) order; children born after
    ``t_max`` are not materialised.  Expansion stops when ``cap`` individuals
    exist.  With ``max_embedded_generation`` set, anchors of that embedded
    generation are not reproduced, so J_0..J_max are complete.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if root not in (ROOT_GENERAL, ROOT_THETA):
        raise ValueError(f"unknown root kind {root!r}")
    laws = OffspringLaws.of(model)
    parent = [-1]
    birth = [0.0]
    theta = [root == ROOT_THETA]
    period = [float(model.law_I.sample(rng))]
    generation = [0]
    block_root = [0]
    emb = [0]
    heap = [(0.0, 0)]
    truncated = False
    beyond = False
    cliques = []
    while heap:
        if len(birth) >= cap:
            truncated = True
            break
        tau, u = heapq.heappop(heap)
        if max_embedded_generation is not None and block_root[u] == u \
                and emb[u] >= max_embedded_generation:
            continue
        opened = reproduce(period[u], laws, rng, root=(u == 0 and root == ROOT_GENERAL))
        for clq in opened:
            if keep_cliques:
                cliques.append((u, clq))
            for d, I_child in zip(clq.passage, clq.periods):
                if d == math.inf:
                    continue
                t_child = tau + d
                if t_child > t_max:
                    beyond = True
                    continue
                c = len(birth)
                is_theta = clq.k == 1
                parent.append(u)
                birth.append(t_child)
                theta.append(is_theta)
                period.append(I_child)
                generation.append(generation[u] + 1)
                if is_theta:
                    block_root.append(c)
                    emb.append(emb[block_root[u]] + 1)
                else:
                    block_root.append(block_root[u])
                    emb.append(-1)
                heapq.heappush(heap, (t_child, c))
    if truncated:
        t_end = min(heap[0][0], t_max) if heap else t_max
    else:
        t_end = t_max
    run = BranchingRun(parent=np.array(parent), birth=np.array(birth), theta=np.array(theta),
                       period=np.array(period, dtype=float), generation=np.array(generation),
                       block_root=np.array(block_root), embedded_generation=np.array(emb),
                       t_max=t_max, t_end=t_end, extinct=not heap and not truncated and not beyond,
                       truncated=truncated, root_kind=root, cliques=cliques)
    if alpha is not None:
        run.W_hat = w_hat(run, alpha)
    return run


def w_hat(run: BranchingRun, alpha: float) -> np.ndarray:
    """W_n = sum over J_n of exp(-alpha * birth), for n = 0..max generation present."""
    emb = run.embedded_generation
    anchors = emb >= 0
    if not anchors.any():
        return np.zeros(1)
    out = np.zeros(emb.max() + 1)
    np.add.at(out, emb[anchors], np.exp(-alpha * run.birth[anchors]))
    return out


def recompute_block_roots(run: BranchingRun) -> np.ndarray:
    """Block anchor of every individual by walking parent links."""
    out = np.empty(run.size, dtype=np.int64)
    for x in range(run.size):
        y = x
        while y != 0 and not run.theta[y]:
            y = run.parent[y]
        out[x] = y
    return out


def characteristic_count(run: BranchingRun, t: float, check: bool = True) -> int:
    """Sum over block anchors x of phi_x(t - tau_x), counting alive block members.

    With ``check`` the result is compared against the direct alive count.
    """
    if t > run.t_end:
        raise ValueError("t beyond the completely simulated horizon")
    members: dict[int, list[int]] = {}
    for y, x in enumerate(run.block_root.tolist()):
        members.setdefault(x, []).append(y)
    total = 0
    for x, ys in members.items():
        s = t - run.birth[x]
        if s < 0:
            continue
        for y in ys:
            if run.birth[y] <= run.birth[x] + s < run.birth[y] + run.period[y]:
                total += 1
    if check:
        direct = int(run.alive_count(t))
        if total != direct:
            raise AssertionError(f"characteristic count {total} != alive count {direct}")
    return total


def growth_estimate(run: BranchingRun, lo: float, hi: float) -> GrowthEstimate:
    """Log-linear slope of the alive count between counts ``lo`` and ``hi``."""
    times, alive, cumulative = run.event_counts()
    return fit_count_window(times, alive, cumulative, lo, hi)


@dataclass
class MartingaleDiagnostics:
    alpha: float
    mean: np.ndarray  # per generation 0..n_gen
    var: np.ndarray
    stderr: np.ndarray
    n_reps: int
    n_truncated: int


def martingale_diagnostics(model: WeightModel, alpha: float, n_gen: int, n_reps: int, rng,
                           cap: int = 1_000_000) -> MartingaleDiagnostics:
    """Monte Carlo moments of W_n over theta-rooted runs, one child stream per replica."""
    values = np.zeros((n_reps, n_gen + 1))
    n_trunc = 0
    for r, child in enumerate(rng.spawn(n_reps)):
        run = run_branching(model, math.inf, cap, child, root=ROOT_THETA, alpha=alpha,
                            max_embedded_generation=n_gen)
        n_trunc += run.truncated
        w = run.W_hat
        values[r, :min(w.size, n_gen + 1)] = w[:n_gen + 1]
    mean = values.mean(axis=0)
    var = values.var(axis=0, ddof=1) if n_reps > 1 else np.zeros(n_gen + 1)
    return MartingaleDiagnostics(alpha, mean, var, np.sqrt(var / n_reps), n_reps, n_trunc)


def export_run(run: BranchingRun, jsonl_path, counts_path) -> None:
    def num(x):
        return None if not math.isfinite(x) else float(x)

    with open(jsonl_path, "w") as fh:
        for i in range(run.size):
            typ = "theta" if run.theta[i] else num(run.period[i])
            emb = int(run.embedded_generation[i])
            rec = {"id": i, "parent": None if run.parent[i] < 0 else int(run.parent[i]),
                   "tau": num(run.birth[i]), "type": typ, "I": num(run.period[i]),
                   "block_root": int(run.block_root[i]),
                   "embedded_generation": emb if emb >= 0 else None}
            fh.write(json.dumps(rec) + "\n")
    times, alive, _ = run.event_counts()
    with open(counts_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "alive"])
        for t, a in zip(times.tolist(), alive.tolist()):
            wr.writerow([repr(t), a])
