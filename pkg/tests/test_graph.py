import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rigepi.graph import (REPEATED_GROUP, REPEATED_VERTEX, REVISITED_EXPLORED, Explorer,
                          clique_graph_from_auxiliary,
                          clustering_coefficient, component_of, explore_component, export_graph,
                          generate_auxiliary, generate_batch, graph_from_cliques, group_count,
                          import_graph)
from rigepi.weights import DiscreteWeightLaw

from conftest import make_model


def edge_triples(g):
    return list(zip(g.edge_src.tolist(), g.adj_dst.tolist(), g.adj_clique.tolist()))


def check_structure(g):
    triples = edge_triples(g)
    assert len(set(triples)) == len(triples)
    assert all(s != d for s, d, _ in triples)
    expected = {(u, v, c) for c in range(g.n_cliques)
                for u, v in itertools.permutations(g.clique(c).tolist(), 2)}
    assert set(triples) == expected
    pairs = {(s, d) for s, d, _ in triples}
    assert all((d, s) in pairs for s, d in pairs)


def brute_transitivity(n, edges):
    adj = {v: set() for v in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    tri = sum(1 for a, b, c in itertools.combinations(range(n), 3)
              if b in adj[a] and c in adj[a] and c in adj[b])
    wedges = sum(len(adj[v]) * (len(adj[v]) - 1) // 2 for v in range(n))
    return 3 * tri / wedges if wedges else 0.0


def test_single_vertex(rng):
    g = generate_batch(make_model(), 1, rng)
    assert g.n == 1 and g.n_edges == 0


def test_n_zero_rejected(rng):
    with pytest.raises(ValueError):
        generate_batch(make_model(), 0, rng)


def test_mean_group_degree(rng):
    n = 100_000
    aux = generate_auxiliary(make_model(A=1.0, B=1.0), n, rng)
    deg = np.bincount(aux.member_vertex, weights=aux.multiplicity, minlength=n)
    expected = aux.group_weights.sum() / (n * 1.0)
    assert abs(expected - 1.0) < 1e-4
    assert abs(deg.mean() - expected) < 0.02


def test_mean_clique_size(rng):
    n = 100_000
    aux = generate_auxiliary(make_model(A=1.0, B=3.0), n, rng)
    size = np.bincount(aux.member_group, weights=aux.multiplicity, minlength=aux.m)
    assert abs(size.mean() - 3.0) < 0.05


def test_conditional_degree_dispersion(rng):
    n = 100_000
    aux = generate_auxiliary(make_model(A=2.0, B=1.0), n, rng)
    deg = np.bincount(aux.member_vertex, weights=aux.multiplicity, minlength=n)
    assert abs(deg.var() / deg.mean() - 1.0) < 0.03


def test_multiplicity_mean(rng):
    # n m pairs, each with mean A B / (n mu_A)
    model = make_model(A=DiscreteWeightLaw.two_point(1.0, 3.0), B=2.0)
    n = 20_000
    aux = generate_auxiliary(model, n, rng)
    expected = aux.vertex_weights.sum() * aux.group_weights.sum() / (n * model.mu_A)
    assert abs(aux.multiplicity.sum() / expected - 1) < 0.02


def test_group_count_exact(rng):
    for _ in range(20):
        mu_A, mu_B = rng.uniform(0.1, 10, size=2)
        n = int(rng.integers(1, 10**6))
        assert group_count(n, mu_A, mu_B) == int(np.floor(n * mu_A / mu_B))
    assert group_count(10, 1.0, 3.0) == 3


@pytest.mark.parametrize("n", [10, 500, 10_000])
def test_batch_structure(rng, n):
    model = make_model(A=DiscreteWeightLaw.two_point(0.5, 3.0), B=DiscreteWeightLaw.two_point(1.0, 4.0))
    g = generate_batch(model, n, rng)
    if n <= 500:
        check_structure(g)
    else:
        s, d = g.edge_src, g.adj_dst
        fwd = set(zip(s.tolist(), d.tolist()))
        assert all((b, a) in fwd for a, b in fwd)
        assert np.all(s != d)
    assert g.clique_sizes().sum() == g.clique_members.size


def test_zero_weights_give_empty_graph(rng):
    g = generate_batch(make_model(A=DiscreteWeightLaw.two_point(0.0, 1.0, 0.5), B=1.0), 5, rng)
    g0 = generate_auxiliary(make_model(), 5, rng, vertex_weights=np.zeros(5))
    assert g0.member_vertex.size == 0
    assert g.n == 5


def test_clustering_triangle():
    assert clustering_coefficient(graph_from_cliques(3, [[0, 1, 2]])) == 1.0


def test_clustering_two_triangles_sharing_vertex():
    g = graph_from_cliques(5, [[0, 1, 2], [2, 3, 4]])
    edges = set(zip(g.edge_src.tolist(), g.adj_dst.tolist()))
    assert clustering_coefficient(g) == pytest.approx(brute_transitivity(5, edges), abs=1e-15)


def test_clustering_no_wedges():
    assert clustering_coefficient(graph_from_cliques(4, [[0, 1], [2, 3]])) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), min_size=0, max_size=5), max_size=6))
def test_clustering_against_brute_force(cliques):
    g = graph_from_cliques(8, cliques)
    check_structure(g)
    edges = set(zip(g.edge_src.tolist(), g.adj_dst.tolist()))
    assert clustering_coefficient(g) == pytest.approx(brute_transitivity(8, edges), abs=1e-12)


def test_clustering_stable_across_seeds():
    model = make_model(A=1.0, B=2.0)
    vals = [clustering_coefficient(generate_batch(model, 100_000, np.random.default_rng(s)))
            for s in range(3)]
    assert min(vals) > 0
    assert max(vals) / min(vals) < 1.2


# --- lazy exploration ---------------------------------------------------------------

def test_isolated_seed(rng):
    model = make_model(A=DiscreteWeightLaw.two_point(0.0, 1.0, 0.5))
    g, state = explore_component(model, 50, 3, None, rng, vertex_weights=np.zeros(50))
    assert g.n_cliques == 0 and state.explored_vertices == {3}


def test_seed_out_of_range(rng):
    with pytest.raises(ValueError):
        explore_component(make_model(), 10, 10, None, rng)


def test_replay_reproduces_batch_component():
    model = make_model(A=DiscreteWeightLaw.two_point(1.0, 3.0), B=1.0)
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 201))
        aux = generate_auxiliary(model, n, rng)
        batch = clique_graph_from_auxiliary(aux)
        v = int(rng.integers(n))
        _, state = explore_component(model, n, v, None, rng, aux=aux)
        assert state.explored_vertices == component_of(batch, v)
        assert not state.events


def test_exploration_sets_grow(rng):
    ex = Explorer(make_model(), 500, rng, seed_vertex=0)
    v, prev_v, prev_g = 0, set(), set()
    while v is not None:
        ex.explore(v)
        st_ = ex.state
        assert prev_v <= st_.explored_vertices and prev_g <= st_.explored_groups
        assert st_.explored_vertices <= st_.discovered | {st_.seed}
        prev_v, prev_g = set(st_.explored_vertices), set(st_.explored_groups)
        v = ex.next_vertex()
    kinds = {e.kind for e in ex.state.events}
    assert kinds <= {REPEATED_GROUP, REPEATED_VERTEX, REVISITED_EXPLORED}


def test_explore_twice_rejected(rng):
    ex = Explorer(make_model(), 50, rng, seed_vertex=0)
    ex.explore(0)
    with pytest.raises(ValueError):
        ex.explore(0)


def test_partial_graph_structure(rng):
    g, _ = explore_component(make_model(), 2000, 0, 50, rng)
    check_structure(g)


def test_first_step_degree_chi_square():
    n, runs = 10_000, 10_000
    model = make_model(A=1.0, B=1.0)
    rng = np.random.default_rng(7)
    A, B = np.ones(n), np.ones(group_count(n, 1.0, 1.0))
    lam = B.sum() * 1.0 / n
    counts = np.empty(runs, dtype=int)
    for r in range(runs):
        ex = Explorer(model, n, rng, seed_vertex=0, vertex_weights=A, group_weights=B)
        opened = ex.explore(0)
        counts[r] = len(opened) + sum(e.kind == REPEATED_GROUP for e in ex.state.events)
    top = int(stats.poisson.ppf(0.9999, lam))
    obs = np.bincount(np.minimum(counts, top), minlength=top + 1)
    probs = stats.poisson.pmf(np.arange(top + 1), lam)
    probs[-1] = stats.poisson.sf(top - 1, lam)
    assert stats.chisquare(obs, probs * runs).pvalue > 0.001


@pytest.mark.parametrize("n", [50, 100, 200])
def test_exploration_matches_batch_in_law(n):
    model = make_model(A=2.0, B=1.0)
    rng = np.random.default_rng(1000 + n)
    runs = 2000
    batch = [len(component_of(generate_batch(model, n, rng), int(rng.integers(n))))
             for _ in range(runs)]
    lazy = [len(explore_component(model, n, None, None, rng)[1].explored_vertices)
            for _ in range(runs)]
    assert stats.ks_2samp(batch, lazy).pvalue > 0.001


def test_export_roundtrip(tmp_path, rng):
    g = generate_batch(make_model(), 300, rng)
    export_graph(g, tmp_path / "e.csv", tmp_path / "c.csv")
    h = import_graph(tmp_path / "e.csv", tmp_path / "c.csv", n=300)
    assert edge_triples(g) == edge_triples(h)
