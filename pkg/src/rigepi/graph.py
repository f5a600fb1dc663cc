"""Mixed-Poisson random intersection graphs.

Two constructions with the same law:

* :func:`generate_batch` realises the whole auxiliary bipartite graph
  (vertices x groups) and projects every group onto a clique;
* :class:`Explorer` / :func:`explore_component` grows the component of one
  vertex step by step, drawing groups and members by size-biased sampling
  from the realised weights.  The explorer also records every draw that
  would break a branching-process reading of the component.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .weights import EmpiricalWeights, WeightModel

REPEATED_GROUP = "repeated-group"
REPEATED_VERTEX = "repeated-vertex"
REVISITED_EXPLORED = "revisited-explored"


def group_count(n: int, mu_A: float, mu_B: float) -> int:
    """m = floor(n mu_A / mu_B)."""
    return int(math.floor(n * mu_A / mu_B))


@dataclass(frozen=True, eq=False)
class AuxiliaryBipartite:
    n: int
    m: int
    vertex_weights: np.ndarray
    group_weights: np.ndarray
    # one row per (vertex, group) pair with at least one edge
    member_vertex: np.ndarray
    member_group: np.ndarray
    multiplicity: np.ndarray

    def groups_of(self, v: int) -> list[int]:
        """Groups of ``v`` repeated by multiplicity, i.e. the aux-graph edge list of v."""
        rows = np.flatnonzero(self.member_vertex == v)
        return [int(g) for r in rows for g in [self.member_group[r]] * int(self.multiplicity[r])]

    def vertices_of(self, g: int) -> list[int]:
        rows = np.flatnonzero(self.member_group == g)
        return [int(u) for r in rows for u in [self.member_vertex[r]] * int(self.multiplicity[r])]


@dataclass(frozen=True, eq=False)
class CliqueGraph:
    """Directed graph whose edges are labelled by the clique (group) that induces them.

    Cliques are stored CSR-style (``clique_ptr``/``clique_members``) and every
    group is kept, including empty and singleton ones.  Edges are stored
    CSR-style by source.  Two vertices sharing several groups get one edge
    per shared clique; ``edge_pair`` maps each edge to its (src, dst)
    pair so that one transmission weight serves all of them.
    """

    n: int
    clique_ptr: np.ndarray
    clique_members: np.ndarray
    adj_ptr: np.ndarray
    adj_dst: np.ndarray
    adj_clique: np.ndarray
    edge_pair: np.ndarray
    vertex_weights: np.ndarray | None = None
    group_weights: np.ndarray | None = None

    @property
    def n_cliques(self) -> int:
        return self.clique_ptr.size - 1

    @property
    def n_edges(self) -> int:
        return self.adj_dst.size

    @property
    def n_pairs(self) -> int:
        return int(self.edge_pair.max()) + 1 if self.edge_pair.size else 0

    def clique(self, c: int) -> np.ndarray:
        return self.clique_members[self.clique_ptr[c]:self.clique_ptr[c + 1]]

    def clique_sizes(self) -> np.ndarray:
        return np.diff(self.clique_ptr)

    @property
    def edge_src(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.adj_ptr))

    def out_edges(self, v: int) -> slice:
        return slice(self.adj_ptr[v], self.adj_ptr[v + 1])

    def neighbours(self, v: int) -> set[int]:
        return set(self.adj_dst[self.out_edges(v)].tolist())

    def cliques_of(self) -> list[list[int]]:
        """Per-vertex list of clique ids."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for c in range(self.n_cliques):
            for v in self.clique(c):
                out[int(v)].append(c)
        return out


def _build_clique_graph(n, clique_of_member, member_ids, n_cliques, vertex_weights=None,
                        group_weights=None) -> CliqueGraph:
    """Project memberships (sorted by clique) onto directed clique edges."""
    clique_of_member = np.asarray(clique_of_member, dtype=np.int64)
    member_ids = np.asarray(member_ids, dtype=np.int64)
    order = np.lexsort((member_ids, clique_of_member))
    clique_of_member = clique_of_member[order]
    member_ids = member_ids[order]
    sizes = np.bincount(clique_of_member, minlength=n_cliques)
    clique_ptr = np.concatenate([[0], np.cumsum(sizes)])

    # every member is paired with every member of its clique, then self pairs dropped
    per_entry = sizes[clique_of_member]
    src_entry = np.repeat(np.arange(member_ids.size), per_entry)
    block_start = np.repeat(np.cumsum(per_entry) - per_entry, per_entry)
    dst_entry = clique_ptr[clique_of_member[src_entry]] + (np.arange(src_entry.size) - block_start)
    keep = src_entry != dst_entry
    src = member_ids[src_entry[keep]]
    dst = member_ids[dst_entry[keep]]
    cid = clique_of_member[src_entry[keep]]

    order = np.lexsort((cid, dst, src))
    src, dst, cid = src[order], dst[order], cid[order]
    adj_ptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))])
    if src.size:
        new_pair = np.concatenate([[True], (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])])
        edge_pair = np.cumsum(new_pair) - 1
    else:
        edge_pair = np.zeros(0, dtype=np.int64)
    return CliqueGraph(n=n, clique_ptr=clique_ptr, clique_members=member_ids,
                       adj_ptr=adj_ptr, adj_dst=dst, adj_clique=cid, edge_pair=edge_pair,
                       vertex_weights=vertex_weights, group_weights=group_weights)


def graph_from_cliques(n: int, cliques) -> CliqueGraph:
    """Build a CliqueGraph from explicit member lists, one list per clique.

    A vertex listed twice in one clique is a single membership.
    """
    cliques = [list(dict.fromkeys(int(v) for v in members)) for members in cliques]
    cid = [c for c, members in enumerate(cliques) for _ in members]
    mem = [int(v) for members in cliques for v in members]
    return _build_clique_graph(n, cid, mem, len(cliques))


def generate_auxiliary(model: WeightModel, n: int, rng: np.random.Generator,
                       vertex_weights=None, group_weights=None) -> AuxiliaryBipartite:
    """Realise the auxiliary bipartite graph.

    Vertex i gets Poisson(A_i sum_j B_j / (n mu_A)) edges in total, each landing
    on group j with probability B_j / sum B; this is the same joint law as
    independent Poisson(A_i B_j / (n mu_A)) multiplicities, at O(edges) cost.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    m = group_count(n, model.mu_A, model.mu_B)
    A = np.asarray(model.law_A.sample(rng, n) if vertex_weights is None else vertex_weights,
                   dtype=float)
    B = np.asarray(model.law_B.sample(rng, m) if group_weights is None else group_weights,
                   dtype=float)
    total_B = float(B.sum()) if m else 0.0
    if total_B > 0:
        degrees = rng.poisson(A * (total_B / (n * model.mu_A)))
        cumB = np.cumsum(B)
        u = rng.random(int(degrees.sum())) * cumB[-1]
        groups = np.minimum(np.searchsorted(cumB, u, side="right"), m - 1)
        vertices = np.repeat(np.arange(n), degrees)
        code = vertices * np.int64(m) + groups
        code, mult = np.unique(code, return_counts=True)
        mv, mg = code // m, code % m
    else:
        mv = mg = mult = np.zeros(0, dtype=np.int64)
    return AuxiliaryBipartite(n=n, m=m, vertex_weights=A, group_weights=B,
                              member_vertex=mv, member_group=mg, multiplicity=mult)


def clique_graph_from_auxiliary(aux: AuxiliaryBipartite) -> CliqueGraph:
    # multi-edges in the auxiliary graph collapse to a single membership
    return _build_clique_graph(aux.n, aux.member_group, aux.member_vertex, aux.m,
                               aux.vertex_weights, aux.group_weights)


def generate_batch(model: WeightModel, n: int, rng: np.random.Generator) -> CliqueGraph:
    return clique_graph_from_auxiliary(generate_auxiliary(model, n, rng))


def component_of(g: CliqueGraph, v: int) -> set[int]:
    seen = {v}
    stack = [v]
    while stack:
        u = stack.pop()
        for w in g.adj_dst[g.out_edges(u)].tolist():
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def undirected_adjacency(g: CliqueGraph) -> sparse.csr_matrix:
    src = g.edge_src
    a = sparse.csr_matrix((np.ones(src.size), (src, g.adj_dst)), shape=(g.n, g.n))
    a.data[:] = 1.0  # parallel edges from overlapping cliques collapse
    return a


def clustering_coefficient(g: CliqueGraph) -> float:
    """Global transitivity 3 * triangles / connected triples of the undirected projection."""
    if g.n < 1:
        raise ValueError("empty graph")
    a = undirected_adjacency(g)
    deg = np.asarray(a.sum(axis=1)).ravel()
    wedges2 = float(np.sum(deg * (deg - 1)))  # twice the number of wedges
    if wedges2 == 0:
        return 0.0
    closed = float((a @ a).multiply(a).sum())  # 6 * triangles
    return closed / wedges2


@dataclass
class MiscouplingEvent:
    step: int
    kind: str
    vertex: int  # vertex being explored when it happened
    item: int  # offending group or vertex id


@dataclass
class ExplorationState:
    seed: int
    explored_vertices: set = field(default_factory=set)
    explored_groups: set = field(default_factory=set)
    discovered: set = field(default_factory=set)
    step: int = 0
    events: list = field(default_factory=list)
    frontier: deque = field(default_factory=deque)

    @property
    def miscoupled(self) -> bool:
        return bool(self.events)

    @property
    def first_event(self) -> MiscouplingEvent | None:
        return self.events[0] if self.events else None

    def pending(self) -> set:
        return self.discovered - self.explored_vertices


@dataclass
class ExploredClique:
    group: int
    primary: int  # the vertex whose exploration discovered the group
    members: list  # primary first, then new members in draw order
    draws: list  # raw member draws, before exclusion of explored vertices


class Explorer:
    """Lazy construction of the component of a seed vertex.

    Each call to :meth:`explore` performs one iteration (steps 1-6) for the
    given vertex.  Randomness for Poisson counts and size-biased picks is
    drawn through ``uniform`` so that a caller can feed coupled uniforms.
    """

    def __init__(self, model: WeightModel, n: int, rng: np.random.Generator, seed_vertex=None,
                 vertex_weights=None, group_weights=None, aux: AuxiliaryBipartite | None = None):
        if n < 1:
            raise ValueError("n must be at least 1")
        self.model = model
        self.n = n
        self.rng = rng
        self.aux = aux
        if aux is not None:
            vertex_weights, group_weights = aux.vertex_weights, aux.group_weights
        self.m = group_count(n, model.mu_A, model.mu_B)
        A = model.law_A.sample(rng, n) if vertex_weights is None else vertex_weights
        B = model.law_B.sample(rng, self.m) if group_weights is None else group_weights
        self.A = EmpiricalWeights(np.asarray(A, dtype=float))
        self.B = EmpiricalWeights(np.asarray(B, dtype=float)) if self.m else None
        total_B = self.B.sum if self.m else 0.0
        # intensity factors of the group-degree and clique-size displays
        self.vertex_factor = total_B / (n * model.mu_A)
        self.group_factor = self.A.sum / (n * model.mu_A)
        if seed_vertex is None:
            seed_vertex = int(rng.integers(n))
        if not 0 <= seed_vertex < n:
            raise ValueError(f"seed vertex {seed_vertex} out of range [0, {n})")
        self.state = ExplorationState(seed=int(seed_vertex))
        self.cliques: list[ExploredClique] = []
        self._draw_log: list[tuple] = []

    # hooks for coupled sampling; a plain explorer uses its own rng
    def poisson(self, lam: float) -> int:
        return int(self.rng.poisson(lam)) if lam > 0 else 0

    def pick_group(self) -> int:
        return int(self.B.size_biased_quantile(self.rng.random()))

    def pick_vertex(self) -> int:
        return int(self.A.size_biased_quantile(self.rng.random()))

    def _group_draws(self, v: int) -> list[int]:
        if self.aux is not None:
            return self.aux.groups_of(v)
        if not self.m:
            return []
        d = self.poisson(self.A.values[v] * self.vertex_factor)
        return [self.pick_group() for _ in range(d)]

    def _member_draws(self, g: int) -> list[int]:
        if self.aux is not None:
            return self.aux.vertices_of(g)
        d = self.poisson(self.B.values[g] * self.group_factor)
        return [self.pick_vertex() for _ in range(d)]

    def _flag(self, kind, v, item):
        if self.aux is not None:
            return  # replaying a realised graph: overlaps are part of the graph
        st = self.state
        st.events.append(MiscouplingEvent(st.step, kind, v, item))

    def explore(self, v: int) -> list[ExploredClique]:
        """One iteration for vertex ``v``; returns the cliques it opened."""
        st = self.state
        if v in st.explored_vertices:
            raise ValueError(f"vertex {v} already explored")
        st.step += 1
        new_cliques = []
        seen_groups: set[int] = set()
        seen_vertices: set[int] = set()
        for g in self._group_draws(v):
            if g in st.explored_groups or g in seen_groups:
                self._flag(REPEATED_GROUP, v, g)
                continue
            seen_groups.add(g)
            draws = self._member_draws(g)
            members = [v]
            for w in draws:
                if w in st.explored_vertices or w == v:
                    self._flag(REVISITED_EXPLORED, v, w)
                elif w in members:
                    self._flag(REPEATED_VERTEX, v, w)
                elif w in st.discovered or w in seen_vertices:
                    # the vertex now sits in two open cliques
                    self._flag(REPEATED_VERTEX, v, w)
                    members.append(w)
                else:
                    seen_vertices.add(w)
                    members.append(w)
            new_cliques.append(ExploredClique(group=g, primary=v, members=members, draws=draws))
        st.explored_groups |= seen_groups
        for c in new_cliques:
            for w in c.members[1:]:
                if w not in st.discovered:
                    st.discovered.add(w)
                    st.frontier.append(w)
        st.explored_vertices.add(v)
        self.cliques.extend(new_cliques)
        return new_cliques

    def next_vertex(self) -> int | None:
        st = self.state
        while st.frontier:
            w = st.frontier.popleft()
            if w not in st.explored_vertices:
                return w
        return None

    def to_graph(self) -> CliqueGraph:
        """Partial CliqueGraph holding the explored cliques (ids in exploration order)."""
        cid = [i for i, c in enumerate(self.cliques) for _ in c.members]
        mem = [w for c in self.cliques for w in c.members]
        return _build_clique_graph(self.n, cid, mem, len(self.cliques), self.A.values,
                                   None if self.B is None else self.B.values)


def explore_component(model: WeightModel, n: int, seed_vertex, max_steps, rng,
                      vertex_weights=None, group_weights=None,
                      aux: AuxiliaryBipartite | None = None):
    """Grow the seed's component breadth-first until it is exhausted or ``max_steps`` is hit."""
    ex = Explorer(model, n, rng, seed_vertex, vertex_weights, group_weights, aux)
    v = ex.state.seed
    limit = math.inf if max_steps is None else max_steps
    while v is not None and ex.state.step < limit:
        ex.explore(v)
        v = ex.next_vertex()
    return ex.to_graph(), ex.state


def export_graph(g: CliqueGraph, edges_path, cliques_path) -> None:
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "clique_id"])
        for s, d, c in zip(g.edge_src.tolist(), g.adj_dst.tolist(), g.adj_clique.tolist()):
            w.writerow([s, d, c])
    with open(cliques_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clique_id", "member_ids"])
        for c in range(g.n_cliques):
            w.writerow([c, *g.clique(c).tolist()])


def import_graph(edges_path, cliques_path, n: int | None = None) -> CliqueGraph:
    """Rebuild a graph from its clique file; the edge file is checked against it."""
    cid, mem = [], []
    n_cliques = 0
    with open(cliques_path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for row in rows:
            c = int(row[0])
            n_cliques = max(n_cliques, c + 1)
            for v in row[1:]:
                cid.append(c)
                mem.append(int(v))
    if n is None:
        n = max(mem) + 1 if mem else 1
    g = _build_clique_graph(n, cid, mem, n_cliques)
    with open(edges_path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        edges = sorted((int(s), int(d), int(c)) for s, d, c in rows)
    mine = sorted(zip(g.edge_src.tolist(), g.adj_dst.tolist(), g.adj_clique.tolist()))
    if edges != mine:
        raise ValueError(f"{edges_path} does not match the cliques in {cliques_path}")
    return g
