import itertools

import numpy as np
import pytest

from dmglearn.graphs import DirectedMixedGraph
from dmglearn.metrics import auprc, f1_bidirected, shd, shd_normalized


def adj(d, edges):
    m = np.zeros((d, d), dtype=bool)
    for i, j in edges:
        m[i, j] = True
    return m


def test_shd_identical():
    a = adj(4, [(0, 1), (2, 3)])
    assert shd(a, a) == 0


def test_shd_single_reversal_costs_one():
    assert shd(adj(2, [(0, 1)]), adj(2, [(1, 0)])) == 1


def test_shd_deletions():
    true = adj(10, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)])
    est = adj(10, [])
    assert shd(est, true) == 7
    assert shd_normalized(est, true) == pytest.approx(0.7)


def test_shd_two_cycle_versus_single_edge():
    # one direction matches, the other is a deletion
    assert shd(adj(2, [(0, 1)]), adj(2, [(0, 1), (1, 0)])) == 1
    assert shd(adj(2, []), adj(2, [(0, 1), (1, 0)])) == 2


def test_shd_is_a_metric_at_d3():
    # symmetry, identity of indiscernibles, triangle inequality by brute
    # force over all 3-node directed graphs on a fixed edge universe
    pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]
    graphs = []
    for bits in itertools.product([0, 1], repeat=6):
        graphs.append(adj(3, [e for e, b in zip(pairs, bits) if b]))
    rng = np.random.default_rng(0)
    idx = rng.integers(0, len(graphs), size=(80, 3))
    for i, j, k in idx:
        a, b, c = graphs[i], graphs[j], graphs[k]
        assert shd(a, b) == shd(b, a)
        assert (shd(a, b) == 0) == np.array_equal(a, b)
        assert shd(a, c) <= shd(a, b) + shd(b, c)


def test_f1_perfect_recovery():
    g = DirectedMixedGraph.from_edges(4, bidirected=[(0, 1), (2, 3)])
    sigma = np.eye(4)
    sigma[0, 1] = sigma[1, 0] = 0.3
    sigma[2, 3] = sigma[3, 2] = -0.2
    assert f1_bidirected(sigma, g, 0.01) == 1.0


def test_f1_no_predictions():
    g = DirectedMixedGraph.from_edges(3, bidirected=[(0, 1)])
    assert f1_bidirected(np.eye(3), g, 0.01) == 0.0


def test_f1_half():
    # two true pairs; one correct and one wrong prediction
    g = DirectedMixedGraph.from_edges(4, bidirected=[(0, 1), (2, 3)])
    sigma = np.eye(4)
    sigma[0, 1] = sigma[1, 0] = 0.5   # hit
    sigma[1, 2] = sigma[2, 1] = 0.5   # false alarm
    assert f1_bidirected(sigma, g, 0.01) == pytest.approx(0.5)


def test_f1_threshold_monotone_beyond_support():
    g = DirectedMixedGraph.from_edges(3, bidirected=[(0, 1)])
    sigma = np.eye(3)
    sigma[0, 1] = sigma[1, 0] = 0.3
    sigma[0, 2] = sigma[2, 0] = 0.1
    values = [f1_bidirected(sigma, g, t) for t in (0.05, 0.2, 0.31, 0.5)]
    assert values[0] <= 1.0 and values[1] == 1.0 and values[2] == 0.0
    assert all(a >= b for a, b in zip(values[1:], values[2:]))


def test_auprc_perfect_separation():
    scored = [(0.9, True), (0.8, True), (0.2, False), (0.1, False)]
    assert auprc(scored) == 1.0


def test_auprc_single_positive_first():
    scored = [(1.0, True)] + [(float(-i), False) for i in range(9)]
    assert auprc(scored) == 1.0


def test_auprc_random_scores_near_prevalence():
    rng = np.random.default_rng(5)
    labels = rng.random(20_000) < 0.3
    scored = list(zip(rng.random(20_000).tolist(), labels.tolist()))
    assert abs(auprc(scored) - 0.3) < 0.02


def test_auprc_invariant_to_monotone_transform():
    rng = np.random.default_rng(7)
    scores = rng.random(200)
    labels = (rng.random(200) < 0.4).tolist()
    a1 = auprc(list(zip(scores.tolist(), labels)))
    a2 = auprc(list(zip(np.exp(3 * scores).tolist(), labels)))
    assert a1 == pytest.approx(a2)


def test_auprc_tie_grouping_ignores_order():
    scored = [(0.5, True), (0.5, False), (0.9, True), (0.1, False)]
    assert auprc(scored) == pytest.approx(auprc(scored[::-1]))


def test_auprc_requires_positives():
    with pytest.raises(ValueError):
        auprc([(0.5, False)])
