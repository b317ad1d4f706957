"""Directed mixed graphs: storage, random generation, reachability queries.

A directed mixed graph has directed edges ``i -> j`` (causal mechanisms)
and symmetric bidirected edges ``i <-> j`` (latent confounding). Entry
``directed[i, j]`` means ``i -> j``. Instances are immutable after
construction (the arrays are marked read-only), so they are safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DirectedMixedGraph",
    "InterventionFamily",
    "generate_er_dmg",
    "reachability_matrix",
    "ancestors",
    "descendants",
    "strongly_connected_components",
    "to_edge_list",
    "from_edge_list",
]


@dataclass(frozen=True)
class DirectedMixedGraph:
    """Graph over vertices ``0..d-1`` with directed and bidirected edges."""

    directed: np.ndarray
    bidirected: np.ndarray

    def __post_init__(self):
        directed = np.array(self.directed, dtype=bool)
        bidirected = np.array(self.bidirected, dtype=bool)
        if directed.ndim != 2 or directed.shape[0] != directed.shape[1]:
            raise ValueError("directed adjacency must be a square matrix")
        if bidirected.shape != directed.shape:
            raise ValueError("bidirected adjacency must match directed shape")
        if directed.diagonal().any():
            raise ValueError("self-loops are not allowed")
        if bidirected.diagonal().any():
            raise ValueError("bidirected adjacency must have an empty diagonal")
        if not np.array_equal(bidirected, bidirected.T):
            raise ValueError("bidirected adjacency must be symmetric")
        directed.setflags(write=False)
        bidirected.setflags(write=False)
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "bidirected", bidirected)

    @classmethod
    def from_edges(
        cls,
        d: int,
        directed: Iterable[tuple[int, int]] = (),
        bidirected: Iterable[tuple[int, int]] = (),
    ) -> "DirectedMixedGraph":
        dmat = np.zeros((d, d), dtype=bool)
        bmat = np.zeros((d, d), dtype=bool)
        for i, j in directed:
            dmat[i, j] = True
        for i, j in bidirected:
            bmat[i, j] = bmat[j, i] = True
        return cls(dmat, bmat)

    @property
    def d(self) -> int:
        return self.directed.shape[0]

    def parents(self, i: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.directed[:, i]).tolist())

    def children(self, i: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.directed[i, :]).tolist())

    def spouses(self, i: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.bidirected[i, :]).tolist())

    def directed_edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.directed))]

    def bidirected_pairs(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(np.triu(self.bidirected, k=1))
        return [(int(i), int(j)) for i, j in zip(ii, jj)]

    def n_directed(self) -> int:
        return int(self.directed.sum())

    def n_bidirected_pairs(self) -> int:
        return int(self.bidirected.sum()) // 2


@dataclass(frozen=True)
class InterventionFamily:
    """Ordered list of interventional target sets; the first may be empty
    (observational regime)."""

    targets: tuple[frozenset[int], ...]

    def __post_init__(self):
        targets = tuple(frozenset(t) for t in self.targets)
        if not targets:
            raise ValueError("intervention family must contain at least one regime")
        object.__setattr__(self, "targets", targets)

    def validate_for(self, d: int) -> None:
        for t in self.targets:
            if any(i < 0 or i >= d for i in t):
                raise ValueError(f"target {sorted(t)} not a subset of range({d})")

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


def generate_er_dmg(
    d: int,
    out_density: float,
    n_confounders: int,
    rng: np.random.Generator,
) -> DirectedMixedGraph:
    """Erdos-Renyi directed part plus uniformly placed confounded pairs.

    Each ordered pair (i, j), i != j, carries a directed edge independently
    with probability ``out_density / (d - 1)`` (expected out-degree equals
    ``out_density``). Exactly ``n_confounders`` unordered pairs, chosen
    uniformly without replacement, carry bidirected edges.
    """
    if d < 2:
        raise ValueError("need at least two vertices")
    if not 0 < out_density < d:
        raise ValueError("out_density must lie in (0, d)")
    max_pairs = d * (d - 1) // 2
    if not 0 <= n_confounders <= max_pairs:
        raise ValueError(f"n_confounders must lie in [0, {max_pairs}]")
    p = min(out_density / (d - 1), 1.0)
    directed = rng.random((d, d)) < p
    np.fill_diagonal(directed, False)
    bidirected = np.zeros((d, d), dtype=bool)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    chosen = rng.choice(max_pairs, size=n_confounders, replace=False)
    for k in np.atleast_1d(chosen):
        i, j = pairs[int(k)]
        bidirected[i, j] = bidirected[j, i] = True
    return DirectedMixedGraph(directed, bidirected)


def reachability_matrix(g: DirectedMixedGraph) -> np.ndarray:
    """Boolean matrix R with R[i, j] true iff j == i or a directed path
    i -> ... -> j exists."""
    r = np.eye(g.d, dtype=bool) | g.directed
    while True:
        r2 = r | ((r.astype(np.uint8) @ r.astype(np.uint8)) > 0)
        if np.array_equal(r2, r):
            return r2
        r = r2


def ancestors(g: DirectedMixedGraph, vertices: Iterable[int]) -> frozenset[int]:
    """All vertices with a directed path into some member of ``vertices``,
    including the set itself. Empty input yields the empty set."""
    idx = sorted(set(vertices))
    if not idx:
        return frozenset()
    r = reachability_matrix(g)
    return frozenset(np.flatnonzero(r[:, idx].any(axis=1)).tolist())


def descendants(g: DirectedMixedGraph, vertices: Iterable[int]) -> frozenset[int]:
    """All vertices reachable from some member of ``vertices`` by a directed
    path, including the set itself."""
    idx = sorted(set(vertices))
    if not idx:
        return frozenset()
    r = reachability_matrix(g)
    return frozenset(np.flatnonzero(r[idx, :].any(axis=0)).tolist())


def strongly_connected_components(g: DirectedMixedGraph) -> list[frozenset[int]]:
    """Partition into maximal sets of mutually reachable vertices, ordered
    by smallest member."""
    r = reachability_matrix(g)
    mutual = r & r.T
    seen = np.zeros(g.d, dtype=bool)
    comps = []
    for i in range(g.d):
        if seen[i]:
            continue
        members = np.flatnonzero(mutual[i])
        seen[members] = True
        comps.append(frozenset(members.tolist()))
    return comps


def to_edge_list(g: DirectedMixedGraph) -> str:
    """Text serialization: header line ``d=<n>`` then one line per edge."""
    lines = [f"d={g.d}"]
    lines += [f"{i} -> {j}" for i, j in g.directed_edges()]
    lines += [f"{i} <-> {j}" for i, j in g.bidirected_pairs()]
    return "\n".join(lines) + "\n"


def from_edge_list(text: str) -> DirectedMixedGraph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("d="):
        raise ValueError("edge list must start with a 'd=<n>' header")
    d = int(lines[0][2:])
    directed, bidirected = [], []
    for ln in lines[1:]:
        if "<->" in ln:
            i, j = (int(s) for s in ln.split("<->"))
            bidirected.append((i, j))
        elif "->" in ln:
            i, j = (int(s) for s in ln.split("->"))
            directed.append((i, j))
        else:
            raise ValueError(f"unrecognized edge line: {ln!r}")
    return DirectedMixedGraph.from_edges(d, directed, bidirected)
