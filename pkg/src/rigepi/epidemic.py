"""SIR epidemic on a clique graph via first-passage times.

Each vertex draws one infectious period I, each directed pair one contact
time T, and the edge weight is T if T <= I_source else infinity.  A vertex
is infected at its weighted distance from the seed, so the whole epidemic
is one Dijkstra sweep.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .graph import CliqueGraph
from .weights import WeightModel

ESCAPED, PRIMARY, SECONDARY = 0, 1, 2
ROLE_NAMES = {ESCAPED: "escaped", PRIMARY: "primary", SECONDARY: "secondary"}


@dataclass(frozen=True, eq=False)
class TransmissionWeights:
    infectious_period: np.ndarray  # per vertex, may be inf
    contact_time: np.ndarray  # per directed pair
    weight: np.ndarray  # per edge entry of the graph; inf when T > I_source

    @classmethod
    def from_arrays(cls, g: CliqueGraph, infectious_period, contact_time) -> "TransmissionWeights":
        I = np.asarray(infectious_period, dtype=float)
        T = np.asarray(contact_time, dtype=float)
        t_edge = T[g.edge_pair]
        w = np.where(t_edge <= I[g.edge_src], t_edge, np.inf)
        return cls(I, T, w)


def draw_transmission_weights(g: CliqueGraph, model: WeightModel, rng) -> TransmissionWeights:
    """One I per vertex, one T per directed pair (shared by overlapping cliques)."""
    I = model.law_I.sample(rng, g.n)
    T = model.law_T.sample(rng, g.n_pairs)
    return TransmissionWeights.from_arrays(g, I, T)


@dataclass(frozen=True, eq=False)
class EpidemicTrace:
    seed: int
    infection_time: np.ndarray
    recovery_time: np.ndarray
    infector: np.ndarray  # -1 for the seed and uninfected vertices
    infector_clique: np.ndarray  # clique of the infecting edge, -1 if none
    role: np.ndarray  # aligned with the graph's clique_members
    t_end: float
    # counts right after each event
    event_time: np.ndarray
    infectious: np.ndarray
    cumulative: np.ndarray
    n: int

    @property
    def n_infected(self) -> int:
        return int(np.isfinite(self.infection_time).sum())

    def count_at(self, t: float, kind: str = "cumulative") -> int:
        i = np.searchsorted(self.event_time, t, side="right") - 1
        if i < 0:
            return 0
        return int((self.cumulative if kind == "cumulative" else self.infectious)[i])


def run_epidemic(g: CliqueGraph, weights: TransmissionWeights, seed_vertex: int,
                 t_max: float = math.inf, stop_after: int | None = None) -> EpidemicTrace:
    """Label-setting sweep from ``seed_vertex``.

    Vertices are settled in order of (infection time, vertex id); a vertex
    only spreads along finite edges.  The sweep halts at ``t_max`` or once
    ``stop_after`` vertices are infected; vertices not settled by then keep
    infection time inf.
    """
    n = g.n
    if not 0 <= seed_vertex < n:
        raise ValueError(f"seed vertex {seed_vertex} out of range")
    ptr = g.adj_ptr.tolist()
    dst = g.adj_dst.tolist()
    cid = g.adj_clique.tolist()
    w = weights.weight.tolist()
    tentative = {seed_vertex: (0.0, -1, -1)}
    settled_time = [math.inf] * n
    infector = [-1] * n
    via = [-1] * n
    done = [False] * n
    heap = [(0.0, seed_vertex)]
    n_done = 0
    t_stop = t_max
    limit = stop_after if stop_after is not None else n
    while heap:
        d, u = heapq.heappop(heap)
        if d > t_max:
            break
        if done[u]:
            continue
        done[u] = True
        settled_time[u] = d
        _, infector[u], via[u] = tentative.pop(u)
        n_done += 1
        if n_done >= limit:
            if stop_after is not None:
                t_stop = d
            break
        for e in range(ptr[u], ptr[u + 1]):
            we = w[e]
            if we == math.inf:
                continue
            v = dst[e]
            if done[v]:
                continue
            nd = d + we
            cur = tentative.get(v)
            if cur is None or nd < cur[0]:
                tentative[v] = (nd, u, cid[e])
                heapq.heappush(heap, (nd, v))

    inf_t = np.array(settled_time)
    rec_t = inf_t + weights.infectious_period
    role = clique_roles(g, inf_t)
    ev_t, infectious, cumulative = _count_steps(inf_t, rec_t, t_stop)
    return EpidemicTrace(seed=seed_vertex, infection_time=inf_t, recovery_time=rec_t,
                         infector=np.array(infector), infector_clique=np.array(via), role=role,
                         t_end=t_stop, event_time=ev_t, infectious=infectious,
                         cumulative=cumulative, n=n)


def simulate_epidemic(g: CliqueGraph, model: WeightModel, rng, seed_vertex: int | None = None,
                      t_max: float = math.inf, stop_after: int | None = None):
    """Draw weights and run one epidemic; refuses models that violate the growth assumption."""
    model.check_growth_assumption()
    weights = draw_transmission_weights(g, model, rng)
    if seed_vertex is None:
        seed_vertex = int(rng.integers(g.n))
    return run_epidemic(g, weights, seed_vertex, t_max, stop_after), weights


def clique_roles(g: CliqueGraph, infection_time: np.ndarray) -> np.ndarray:
    """Primary: members attaining the clique's earliest finite infection time.

    Secondary: any later-infected member.  Escaped: never infected.
    """
    t = infection_time[g.clique_members]
    sizes = g.clique_sizes()
    nonempty = sizes > 0
    first = np.full(g.n_cliques, np.inf)
    if t.size:
        first[nonempty] = np.minimum.reduceat(t, g.clique_ptr[:-1][nonempty])
    first_m = np.repeat(first, sizes)
    role = np.full(t.size, ESCAPED, dtype=np.int8)
    finite = np.isfinite(t)
    role[finite & (t == first_m)] = PRIMARY
    role[finite & (t > first_m)] = SECONDARY
    return role


def _count_steps(inf_t, rec_t, t_stop):
    infected = np.isfinite(inf_t)
    starts = inf_t[infected]
    ends = rec_t[infected]
    ends = ends[ends <= t_stop]
    times = np.concatenate([starts, ends])
    delta = np.concatenate([np.ones(starts.size, dtype=np.int64), -np.ones(ends.size, dtype=np.int64)])
    kind = np.concatenate([np.zeros(starts.size), np.ones(ends.size)])
    order = np.lexsort((kind, times))
    times, delta = times[order], delta[order]
    infectious = np.cumsum(delta)
    cumulative = np.cumsum(delta > 0)
    return times, infectious, cumulative


def brute_force_infection_times(g: CliqueGraph, weights: TransmissionWeights, seed: int) -> list:
    """Minimum weight over every simple directed path from ``seed`` (tiny graphs only)."""
    best = [math.inf] * g.n
    best[seed] = 0.0
    src = g.edge_src.tolist()
    out = [[] for _ in range(g.n)]
    for e, (s, d) in enumerate(zip(src, g.adj_dst.tolist())):
        out[s].append((d, weights.weight[e]))

    def walk(u, dist, visited):
        for v, we in out[u]:
            if v in visited or we == math.inf:
                continue
            nd = dist + we
            if nd < best[v]:
                best[v] = nd
            visited.add(v)
            walk(v, nd, visited)
            visited.remove(v)

    walk(seed, 0.0, {seed})
    return best


@dataclass(frozen=True)
class GrowthEstimate:
    alpha_hat: float
    window: tuple[float, float]
    stderr: float
    n_points: int


@dataclass(frozen=True)
class WindowRule:
    """Fit window: from the first time ``count_kind`` reaches ``lo`` to the first
    time the cumulative count reaches ``hi`` (default ``n ** hi_exponent``)."""

    lo: float = 50
    hi: float | None = None
    hi_exponent: float = 0.4

    def upper(self, n: int) -> float:
        return self.hi if self.hi is not None else n ** self.hi_exponent


def fit_growth(t, counts) -> GrowthEstimate:
    """Least-squares slope of log(count) against t."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(counts, dtype=float))
    if t.size < 3 or np.ptp(t) == 0:
        raise ValueError("window unreachable: fewer than 3 distinct points")
    fit = stats.linregress(t, y)
    return GrowthEstimate(alpha_hat=float(fit.slope), window=(float(t[0]), float(t[-1])),
                          stderr=float(fit.stderr), n_points=int(t.size))


def estimate_growth_rate(trace: EpidemicTrace, count_kind: str = "cumulative",
                         window: WindowRule = WindowRule()) -> GrowthEstimate:
    if count_kind not in ("cumulative", "infectious"):
        raise ValueError("count_kind must be 'cumulative' or 'infectious'")
    counts = trace.cumulative if count_kind == "cumulative" else trace.infectious
    return fit_count_window(trace.event_time, counts, trace.cumulative, window.lo,
                            window.upper(trace.n))


def fit_count_window(times, counts, cumulative, lo: float, hi: float) -> GrowthEstimate:
    start = np.flatnonzero(counts >= lo)
    stop = np.flatnonzero(cumulative >= hi)
    if start.size == 0 or stop.size == 0 or stop[0] <= start[0]:
        raise ValueError("window unreachable")
    sl = slice(start[0], stop[0] + 1)
    t, c = times[sl], counts[sl]
    keep = c > 0
    return fit_growth(t[keep], c[keep])


def export_trace(g: CliqueGraph, trace: EpidemicTrace, jsonl_path, counts_path) -> None:
    def num(x):
        return None if not math.isfinite(x) else float(x)

    per_vertex: list[list] = [[] for _ in range(g.n)]
    members = g.clique_members.tolist()
    roles = trace.role.tolist()
    for c in range(g.n_cliques):
        for i in range(g.clique_ptr[c], g.clique_ptr[c + 1]):
            per_vertex[members[i]].append([c, ROLE_NAMES[roles[i]]])
    with open(jsonl_path, "w") as fh:
        for v in range(g.n):
            inf = trace.infector[v]
            rec = {"id": v, "infection_time": num(trace.infection_time[v]),
                   "recovery_time": num(trace.recovery_time[v]),
                   "infector": None if inf < 0 else int(inf), "roles": per_vertex[v]}
            fh.write(json.dumps(rec) + "\n")
    with open(counts_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "infectious", "cumulative"])
        for t, i, c in zip(trace.event_time.tolist(), trace.infectious.tolist(),
                           trace.cumulative.tolist()):
            wr.writerow([repr(t), i, c])
