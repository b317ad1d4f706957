"""Graph-equivalence machinery for evaluating recovered mixed graphs.

Cyclic graphs are compared through their acyclifications: separation
statements on a cyclic graph reduce to d-separation on the acyclified
graph, interventional regimes are encoded by context nodes pointing into
their targets, and each resulting acyclic directed mixed graph is
converted to a maximal ancestral graph. Two graphs are equivalent for an
intervention family exactly when the derived ancestral graphs share
skeleton, unshielded colliders, and collider status along common
discriminating paths; the modified structural Hamming distance counts the
violations of those three conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dmglearn.graphs import (
    DirectedMixedGraph,
    InterventionFamily,
    ancestors,
    reachability_matrix,
    strongly_connected_components,
)

__all__ = [
    "TAIL",
    "ARROW",
    "AncestralGraph",
    "AugmentedGraph",
    "acyclify",
    "d_separated",
    "sigma_separated",
    "sigma_separated_direct",
    "augment",
    "mag_of",
    "unshielded_colliders",
    "discriminating_paths",
    "modified_shd",
    "i_markov_equivalent",
    "ancestral_to_text",
    "ancestral_from_text",
]

TAIL = "t"
ARROW = "a"


@dataclass
class AncestralGraph:
    """Mixed graph with endpoint marks: at most one edge per vertex pair,
    stored as (mark at i, mark at j) for i < j. A directed edge i -> j is
    (tail, arrow); a bidirected edge is (arrow, arrow)."""

    d: int
    edges: dict[tuple[int, int], tuple[str, str]]

    def __post_init__(self):
        clean = {}
        for (i, j), (mi, mj) in self.edges.items():
            if i == j:
                raise ValueError("self-edges are not allowed")
            if i > j:
                i, j, mi, mj = j, i, mj, mi
            if (i, j) in clean:
                raise ValueError("at most one edge per pair")
            if mi not in (TAIL, ARROW) or mj not in (TAIL, ARROW):
                raise ValueError("marks must be tail or arrow")
            clean[(i, j)] = (mi, mj)
        self.edges = clean

    def adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def mark_at(self, i: int, j: int) -> str:
        """Mark at endpoint i of the edge between i and j."""
        mi, mj = self.edges[(min(i, j), max(i, j))]
        return mi if i < j else mj

    def neighbors(self, i: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def is_parent(self, i: int, j: int) -> bool:
        if not self.adjacent(i, j):
            return False
        return self.mark_at(i, j) == TAIL and self.mark_at(j, i) == ARROW

    def skeleton(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)


@dataclass(frozen=True)
class AugmentedGraph:
    """System graph plus one context node per non-empty regime; context
    node k has directed edges into exactly its target set and no parents
    or spouses."""

    graph: DirectedMixedGraph
    n_system: int
    context_targets: tuple[frozenset[int], ...]


def acyclify(g: DirectedMixedGraph) -> DirectedMixedGraph:
    """Collapse strongly connected structure into an acyclic graph with
    the same separation semantics: j -> i iff j is a parent of i's
    component from outside it; i <-> j iff their components touch the same
    vertex or are linked by a bidirected edge."""
    d = g.d
    comps = strongly_connected_components(g)
    comp_of = {}
    for ci, members in enumerate(comps):
        for v in members:
            comp_of[v] = ci
    members_arr = [sorted(c) for c in comps]
    directed = np.zeros((d, d), dtype=bool)
    for i in range(d):
        sc = comps[comp_of[i]]
        pa = set()
        for v in sc:
            pa.update(np.flatnonzero(g.directed[:, v]).tolist())
        for j in pa - sc:
            directed[j, i] = True
    n_comp = len(comps)
    comp_linked = np.eye(n_comp, dtype=bool)
    for ci in range(n_comp):
        for cj in range(ci + 1, n_comp):
            if g.bidirected[np.ix_(members_arr[ci], members_arr[cj])].any():
                comp_linked[ci, cj] = comp_linked[cj, ci] = True
    bidirected = np.zeros((d, d), dtype=bool)
    for i in range(d):
        for j in range(i + 1, d):
            ci, cj = comp_of[i], comp_of[j]
            if ci == cj or comp_linked[ci, cj]:
                bidirected[i, j] = bidirected[j, i] = True
    return DirectedMixedGraph(directed, bidirected)


def _edge_steps(g: DirectedMixedGraph, v: int):
    """All single-edge moves away from v as (w, mark at v, mark at w)."""
    for w in np.flatnonzero(g.directed[v]):
        yield int(w), TAIL, ARROW  # v -> w
    for w in np.flatnonzero(g.directed[:, v]):
        yield int(w), ARROW, TAIL  # w -> v, walked v to w
    for w in np.flatnonzero(g.bidirected[v]):
        yield int(w), ARROW, ARROW


def _check_disjoint(g: DirectedMixedGraph, a, b, c):
    a, b, c = frozenset(a), frozenset(b), frozenset(c)
    for s in (a, b, c):
        if any(v < 0 or v >= g.d for v in s):
            raise ValueError("vertex out of range")
    if a & b or a & c or b & c:
        raise ValueError("A, B, C must be pairwise disjoint")
    return a, b, c


def d_separated(g: DirectedMixedGraph, a, b, c) -> bool:
    """True iff every path between A and B is d-blocked given C: some
    collider outside an(C), or some non-collider inside C. Valid for
    cyclic mixed graphs (reachability over walk states)."""
    a, b, c = _check_disjoint(g, a, b, c)
    if not a or not b:
        return True
    an_c = ancestors(g, c)
    visited = set()
    stack = []
    for start in a:
        for w, _, mw in _edge_steps(g, start):
            if w in b:
                return False
            state = (w, mw == ARROW)
            if state not in visited:
                visited.add(state)
                stack.append(state)
    while stack:
        v, head_in = stack.pop()
        for w, mv, mw in _edge_steps(g, v):
            collider = head_in and mv == ARROW
            if collider:
                if v not in an_c:
                    continue
            elif v in c:
                continue
            if w in b:
                return False
            state = (w, mw == ARROW)
            if state not in visited:
                visited.add(state)
                stack.append(state)
    return True


def sigma_separated(g: DirectedMixedGraph, a, b, c) -> bool:
    """Separation criterion that stays valid in cyclic graphs, computed as
    d-separation on the acyclified graph."""
    a, b, c = _check_disjoint(g, a, b, c)
    return d_separated(acyclify(g), a, b, c)


def _simple_paths(g: DirectedMixedGraph, start: int, end: int):
    """All simple paths start..end as (nodes, steps); steps[k] holds the
    marks (at node k, at node k+1) of the k-th edge. Parallel edges of
    different type yield distinct paths."""
    out = []

    def rec(v, nodes, steps):
        for w, mv, mw in _edge_steps(g, v):
            if w == end:
                out.append((nodes + [w], steps + [(mv, mw)]))
            elif w not in nodes:
                rec(w, nodes + [w], steps + [(mv, mw)])

    if start != end:
        rec(start, [start], [])
    return out


def _sigma_blocked(nodes, steps, c, an_c, comp_of) -> bool:
    if nodes[0] in c or nodes[-1] in c:
        return True
    for k in range(1, len(nodes) - 1):
        head_in = steps[k - 1][1] == ARROW
        head_out = steps[k][0] == ARROW
        if head_in and head_out:
            if nodes[k] not in an_c:
                return True
        elif nodes[k] in c:
            # non-collider in C blocks when it points at an on-path
            # neighbor outside its strongly connected component
            if steps[k - 1] == (ARROW, TAIL) and comp_of[nodes[k - 1]] != comp_of[nodes[k]]:
                return True
            if steps[k] == (TAIL, ARROW) and comp_of[nodes[k + 1]] != comp_of[nodes[k]]:
                return True
    return False


def sigma_separated_direct(g: DirectedMixedGraph, a, b, c) -> bool:
    """Separation verdict straight from the path-blocking definition, by
    exhaustive enumeration of simple paths; intended for small graphs as a
    cross-check of the acyclification route."""
    a, b, c = _check_disjoint(g, a, b, c)
    an_c = ancestors(g, c)
    comps = strongly_connected_components(g)
    comp_of = {}
    for ci, members in enumerate(comps):
        for v in members:
            comp_of[v] = ci
    for s in a:
        for t in b:
            for nodes, steps in _simple_paths(g, s, t):
                if not _sigma_blocked(nodes, steps, c, an_c, comp_of):
                    return False
    return True


def augment(g: DirectedMixedGraph, family: InterventionFamily) -> AugmentedGraph:
    """Append one context node per non-empty regime, each with directed
    edges into exactly its target set."""
    family.validate_for(g.d)
    nonempty = [t for t in family if t]
    d = g.d
    n = d + len(nonempty)
    directed = np.zeros((n, n), dtype=bool)
    bidirected = np.zeros((n, n), dtype=bool)
    directed[:d, :d] = g.directed
    bidirected[:d, :d] = g.bidirected
    for k, t in enumerate(nonempty):
        directed[d + k, sorted(t)] = True
    return AugmentedGraph(DirectedMixedGraph(directed, bidirected), d, tuple(nonempty))


def _has_inducing_path(g: DirectedMixedGraph, a: int, b: int,
                       reach: np.ndarray) -> bool:
    """Inducing path relative to the empty set: every non-endpoint is a
    collider and an ancestor of an endpoint."""

    def rec(v, head_in, visited):
        for w, mv, mw in _edge_steps(g, v):
            if v != a:
                if not (head_in and mv == ARROW):
                    continue
                if not (reach[v, a] or reach[v, b]):
                    continue
            if w == b:
                return True
            if w in visited:
                continue
            if rec(w, mw == ARROW, visited | {w}):
                return True
        return False

    return rec(a, False, {a})


def mag_of(admg: DirectedMixedGraph) -> AncestralGraph:
    """Maximal ancestral graph of an acyclic directed mixed graph:
    vertices are adjacent iff an inducing path joins them, and each edge is
    oriented by ancestry (bidirected when neither endpoint is an ancestor
    of the other)."""
    if any(len(c) > 1 for c in strongly_connected_components(admg)):
        raise ValueError("input must be acyclic")
    reach = reachability_matrix(admg)
    edges = {}
    for i in range(admg.d):
        for j in range(i + 1, admg.d):
            if not _has_inducing_path(admg, i, j, reach):
                continue
            if reach[i, j]:
                edges[(i, j)] = (TAIL, ARROW)
            elif reach[j, i]:
                edges[(i, j)] = (ARROW, TAIL)
            else:
                edges[(i, j)] = (ARROW, ARROW)
    return AncestralGraph(admg.d, edges)


def unshielded_colliders(ag: AncestralGraph) -> set[tuple[int, int, int]]:
    """Triples (a, b, c) with a, c non-adjacent and both edges at b
    arrow-marked into b; stored once with a < c."""
    out = set()
    for b in range(ag.d):
        nbrs = ag.neighbors(b)
        for ai in range(len(nbrs)):
            for ci in range(ai + 1, len(nbrs)):
                a, c = nbrs[ai], nbrs[ci]
                if ag.adjacent(a, c):
                    continue
                if ag.mark_at(b, a) == ARROW and ag.mark_at(b, c) == ARROW:
                    out.add((a, b, c))
    return out


def discriminating_paths(ag: AncestralGraph, b: int) -> set[tuple[int, ...]]:
    """All paths (i_0, ..., i_{n-1} = b, i_n) with at least three edges
    whose endpoints are non-adjacent and whose nodes strictly between i_0
    and b are both colliders on the path and parents of i_n."""
    result: set[tuple[int, ...]] = set()

    def rec(chain: list[int], last: int):
        head = chain[0]
        for u in ag.neighbors(head):
            if u in chain:
                continue
            if head != b:
                if ag.mark_at(head, u) != ARROW or ag.mark_at(head, chain[1]) != ARROW:
                    continue
                if not ag.is_parent(head, last):
                    continue
            new_chain = [u] + chain
            if len(new_chain) >= 4 and not ag.adjacent(u, last):
                result.add(tuple(new_chain))
            rec(new_chain, last)

    for last in ag.neighbors(b):
        rec([b, last], last)
    return result


def _collider_status(ag: AncestralGraph, path: tuple[int, ...]) -> bool:
    """Is the discriminated vertex (second to last) a collider on the path?"""
    prev_node, b, last = path[-3], path[-2], path[-1]
    return ag.mark_at(b, prev_node) == ARROW and ag.mark_at(b, last) == ARROW


def _derived_mag(g: DirectedMixedGraph, family: InterventionFamily) -> AncestralGraph:
    return mag_of(acyclify(augment(g, family).graph))


def modified_shd(g1: DirectedMixedGraph, g2: DirectedMixedGraph,
                 family: InterventionFamily) -> int:
    """Equivalence-aware edit count between two mixed graphs: skeleton
    differences plus unshielded-collider differences plus collider-status
    mismatches on paths that are discriminating in both derived ancestral
    graphs."""
    if g1.d != g2.d:
        raise ValueError("graphs must share the vertex count")
    m1 = _derived_mag(g1, family)
    m2 = _derived_mag(g2, family)
    n1 = len(m1.skeleton() ^ m2.skeleton())
    n2 = len(unshielded_colliders(m1) ^ unshielded_colliders(m2))
    disc1 = {p for b in range(m1.d) for p in discriminating_paths(m1, b)}
    disc2 = {p for b in range(m2.d) for p in discriminating_paths(m2, b)}
    n3 = sum(
        1 for p in disc1 & disc2 if _collider_status(m1, p) != _collider_status(m2, p)
    )
    return n1 + n2 + n3


def i_markov_equivalent(g1: DirectedMixedGraph, g2: DirectedMixedGraph,
                        family: InterventionFamily) -> bool:
    """Equivalence under the intervention family: no discrepancy in any of
    the three ancestral-graph conditions."""
    return modified_shd(g1, g2, family) == 0


def ancestral_to_text(ag: AncestralGraph) -> str:
    """One line per edge, ``i <mark>-<mark> j`` with marks 't'/'a'."""
    lines = [f"d={ag.d}"]
    for (i, j), (mi, mj) in sorted(ag.edges.items()):
        lines.append(f"{i} {mi}-{mj} {j}")
    return "\n".join(lines) + "\n"


def ancestral_from_text(text: str) -> AncestralGraph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("d="):
        raise ValueError("ancestral graph text must start with 'd=<n>'")
    d = int(lines[0][2:])
    edges = {}
    for ln in lines[1:]:
        left, marks, right = ln.split()
        mi, mj = marks.split("-")
        edges[(int(left), int(right))] = (mi, mj)
    return AncestralGraph(d, edges)
