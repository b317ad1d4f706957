"""Recovery metrics: structural Hamming distance for directed edges,
F1 for confounded pairs, and area under the precision-recall curve."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dmglearn.graphs import DirectedMixedGraph

__all__ = ["MetricReport", "shd", "shd_normalized", "f1_bidirected", "auprc"]


@dataclass
class MetricReport:
    shd: int
    shd_normalized: float
    f1_bidirected: float
    auprc_directed: float
    auprc_bidirected: float
    counts: dict = field(default_factory=dict)


def shd(g_hat: np.ndarray, g_true: np.ndarray) -> int:
    """Edit distance between directed adjacency matrices.

    Unit operations are edge addition, deletion, and reversal; a reversal
    (the two graphs carry the same pair in opposite orientations only)
    costs 1, not 2.
    """
    a = np.asarray(g_hat, dtype=bool)
    b = np.asarray(g_true, dtype=bool)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency matrices must be square and same shape")
    mismatch = a ^ b
    # a mismatched anti-parallel pair is a single reversal
    reversal = mismatch & mismatch.T & (a ^ a.T) & (b ^ b.T)
    n_rev = int(np.triu(reversal, k=1).sum())
    return int(mismatch.sum()) - n_rev


def shd_normalized(g_hat: np.ndarray, g_true: np.ndarray) -> float:
    return shd(g_hat, g_true) / np.asarray(g_true).shape[0]


def f1_bidirected(
    sigma_hat: np.ndarray, g_true: DirectedMixedGraph, threshold: float
) -> float:
    """F1 of confounded-pair recovery from an estimated noise covariance.

    A pair (i, j), i < j, is predicted confounded when
    ``abs(sigma_hat[i, j]) > threshold``. F1 is 0 when precision and recall
    are both undefined or zero.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if not np.allclose(sigma_hat, sigma_hat.T):
        raise ValueError("sigma_hat must be symmetric")
    upper = np.triu_indices(g_true.d, k=1)
    pred = np.abs(sigma_hat[upper]) > threshold
    true = g_true.bidirected[upper]
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def auprc(scored: list[tuple[float, bool]]) -> float:
    """Area under the precision-recall step curve.

    ``scored`` holds (score, label) pairs. The curve is swept over the
    distinct score thresholds in decreasing order; equal scores are grouped
    so the result does not depend on input order. No interpolation.
    """
    if not scored:
        raise ValueError("no scored items")
    n_pos = sum(1 for _, lab in scored if lab)
    if n_pos == 0:
        raise ValueError("at least one positive label required")
    order = sorted(scored, key=lambda t: -t[0])
    area = 0.0
    tp = fp = 0
    prev_recall = 0.0
    k = 0
    while k < len(order):
        score = order[k][0]
        while k < len(order) and order[k][0] == score:
            if order[k][1]:
                tp += 1
            else:
                fp += 1
            k += 1
        precision = tp / (tp + fp)
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area
