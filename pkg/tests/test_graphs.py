import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmglearn.graphs import (
    DirectedMixedGraph,
    InterventionFamily,
    ancestors,
    descendants,
    from_edge_list,
    generate_er_dmg,
    strongly_connected_components,
    to_edge_list,
)


def test_rejects_self_loops():
    m = np.zeros((3, 3), dtype=bool)
    m[1, 1] = True
    with pytest.raises(ValueError):
        DirectedMixedGraph(m, np.zeros((3, 3), dtype=bool))


def test_rejects_asymmetric_bidirected():
    b = np.zeros((3, 3), dtype=bool)
    b[0, 1] = True
    with pytest.raises(ValueError):
        DirectedMixedGraph(np.zeros((3, 3), dtype=bool), b)


def test_graphs_are_immutable():
    g = DirectedMixedGraph.from_edges(3, directed=[(0, 1)])
    with pytest.raises(ValueError):
        g.directed[0, 2] = True


def test_er_forced_edges_at_d2():
    # d=2, out_density=1 forces probability 1; one confounder pair exists
    for seed in range(20):
        g = generate_er_dmg(2, 1.0, 1, np.random.default_rng(seed))
        assert g.directed[0, 1] and g.directed[1, 0]
        assert g.bidirected_pairs() == [(0, 1)]


def test_er_rejects_single_vertex():
    with pytest.raises(ValueError):
        generate_er_dmg(1, 0.5, 0, np.random.default_rng(0))


def test_er_rejects_too_many_confounders():
    with pytest.raises(ValueError):
        generate_er_dmg(4, 2.0, 7, np.random.default_rng(0))


def test_er_mean_directed_edge_count():
    # expected count is Binomial(90, 2/9): mean 20, checked within 3 SEs
    rng = np.random.default_rng(123)
    n_draws = 10_000
    counts = [generate_er_dmg(10, 2.0, 0, rng).n_directed() for _ in range(n_draws)]
    p = 2.0 / 9.0
    se = np.sqrt(90 * p * (1 - p) / n_draws)
    assert abs(np.mean(counts) - 20.0) < 3 * se


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_er_output_valid_for_all_seeds(seed):
    g = generate_er_dmg(6, 2.0, 3, np.random.default_rng(seed))
    assert not g.directed.diagonal().any()
    assert not g.bidirected.diagonal().any()
    assert np.array_equal(g.bidirected, g.bidirected.T)
    assert g.n_bidirected_pairs() == 3


def test_scc_dag_is_singletons():
    g = DirectedMixedGraph.from_edges(3, directed=[(0, 1), (1, 2)])
    assert strongly_connected_components(g) == [
        frozenset({0}), frozenset({1}), frozenset({2})]


def test_scc_two_cycle():
    g = DirectedMixedGraph.from_edges(2, directed=[(0, 1), (1, 0)])
    assert strongly_connected_components(g) == [frozenset({0, 1})]


def test_scc_cycle_with_upstream_nodes():
    # vertices: X1=0, X2=1, X3=2, X4=3 with a 2-cycle between X3 and X4
    g = DirectedMixedGraph.from_edges(
        4, directed=[(2, 3), (3, 2), (0, 2), (1, 3), (1, 2)])
    assert set(strongly_connected_components(g)) == {
        frozenset({0}), frozenset({1}), frozenset({2, 3})}


def test_ancestors_chain():
    g = DirectedMixedGraph.from_edges(3, directed=[(0, 1), (1, 2)])
    assert ancestors(g, {2}) == frozenset({0, 1, 2})
    assert descendants(g, {0}) == frozenset({0, 1, 2})
    assert ancestors(g, set()) == frozenset()


def test_ancestors_two_cycle():
    g = DirectedMixedGraph.from_edges(2, directed=[(0, 1), (1, 0)])
    assert ancestors(g, {0}) == frozenset({0, 1})
    assert descendants(g, {0}) == frozenset({0, 1})


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_reachability_properties(seed):
    rng = np.random.default_rng(seed)
    g = generate_er_dmg(6, 2.0, 0, rng)
    s = {int(rng.integers(6))}
    an = ancestors(g, s)
    # idempotent closure and monotone in S
    assert ancestors(g, an) == an
    assert an <= ancestors(g, an | {int(rng.integers(6))})
    # sc(i) = an(i) & de(i)
    comps = strongly_connected_components(g)
    for i in range(6):
        expected = ancestors(g, {i}) & descendants(g, {i})
        assert next(c for c in comps if i in c) == expected


def test_edge_list_round_trip():
    g = DirectedMixedGraph.from_edges(
        4, directed=[(0, 2), (3, 1)], bidirected=[(1, 2)])
    text = to_edge_list(g)
    assert text.splitlines()[0] == "d=4"
    g2 = from_edge_list(text)
    assert np.array_equal(g.directed, g2.directed)
    assert np.array_equal(g.bidirected, g2.bidirected)


def test_intervention_family_validation():
    with pytest.raises(ValueError):
        InterventionFamily(())
    fam = InterventionFamily((frozenset(), frozenset({1})))
    fam.validate_for(3)
    with pytest.raises(ValueError):
        fam.validate_for(1)
