"""Ground-truth structural equation models and interventional data.

A model is x = F(x, z) at equilibrium with F either linear (W^T x + z) or
tanh(W^T x + z), z ~ N(0, Sigma_Z) with off-diagonal covariance support
equal to the bidirected edges. Hard interventions clamp coordinates to
exogenous draws and cut their mechanisms.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dmglearn.graphs import DirectedMixedGraph, strongly_connected_components

__all__ = [
    "SemSpec",
    "RegimeDataset",
    "sample_weights",
    "make_contractive",
    "set_spectral_norm",
    "sample_confounder_covariance",
    "simulate",
    "write_regime_csv",
    "read_regime_csv",
    "write_manifest",
    "read_manifest",
]

FIXED_POINT_TOL = 1e-10


@dataclass(frozen=True)
class SemSpec:
    """Ground-truth generator: weighted graph, mechanism kind, noise
    covariance. ``weights[i, j]`` is the coefficient on edge i -> j."""

    graph: DirectedMixedGraph
    weights: np.ndarray
    nonlinearity: str  # "linear" | "tanh"
    sigma_z: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        s = np.array(self.sigma_z, dtype=float)
        g = self.graph
        if w.shape != (g.d, g.d):
            raise ValueError("weights shape must match the graph")
        off = ~np.eye(g.d, dtype=bool)
        if not np.array_equal((w != 0) & off, g.directed):
            raise ValueError("weight support must equal the directed edges")
        if np.any(np.diag(w) != 0):
            raise ValueError("weights may not carry self-loops")
        if self.nonlinearity not in ("linear", "tanh"):
            raise ValueError("nonlinearity must be 'linear' or 'tanh'")
        if s.shape != (g.d, g.d) or not np.allclose(s, s.T):
            raise ValueError("sigma_z must be a symmetric d x d matrix")
        if not np.array_equal((np.abs(s) > 0) & off, g.bidirected):
            raise ValueError("sigma_z off-diagonal support must equal the bidirected edges")
        np.linalg.cholesky(s)  # raises if not positive definite
        w.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigma_z", s)


@dataclass(frozen=True)
class RegimeDataset:
    """Samples observed under one interventional regime."""

    target: frozenset[int]
    samples: np.ndarray  # (n, d)
    intervention_value_stddev: float = 1.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2:
            raise ValueError("samples must be an (n, d) matrix")
        if self.intervention_value_stddev <= 0:
            raise ValueError("intervention_value_stddev must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "target", frozenset(self.target))

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


def sample_weights(graph: DirectedMixedGraph, rng: np.random.Generator) -> np.ndarray:
    """Independent draws from Unif((-0.9, -0.2) u (0.2, 0.9)) on each
    directed edge; exact zeros elsewhere."""
    d = graph.d
    mag = rng.uniform(0.2, 0.9, size=(d, d))
    sign = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
    return np.where(graph.directed, sign * mag, 0.0)


def make_contractive(w: np.ndarray, target_norm: float = 0.8) -> np.ndarray:
    """Rescale so the largest singular value is at most ``target_norm``;
    matrices already inside the ball are returned unchanged."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    smax = np.linalg.norm(w, 2) if w.size else 0.0
    if smax > target_norm:
        return w * (target_norm / smax)
    return w.copy()


def set_spectral_norm(w: np.ndarray, value: float) -> np.ndarray:
    """Rescale a nonzero matrix to have largest singular value ``value``
    exactly (used for non-contractive acyclic ground truths)."""
    w = np.asarray(w, dtype=float)
    smax = np.linalg.norm(w, 2)
    if smax == 0.0:
        raise ValueError("cannot rescale the zero matrix")
    return w * (value / smax)


def sample_confounder_covariance(
    graph: DirectedMixedGraph,
    max_std: float,
    rng: np.random.Generator,
    max_rounds: int = 100,
) -> np.ndarray:
    """Random SPD covariance whose off-diagonal support equals the
    bidirected edges, rescaled so the largest diagonal entry is max_std**2.

    Confounded pairs get correlations of magnitude in [0.25, 0.8] with
    random sign, so every planted confounder is statistically detectable.
    The masked matrix is alternately projected onto the positive-definite
    cone (eigenvalue flooring) and back onto the support pattern until
    Cholesky succeeds.
    """
    if max_std <= 0:
        raise ValueError("max_std must be positive")
    d = graph.d
    mask = graph.bidirected
    var = rng.uniform(0.5, 1.0, size=d)
    corr = rng.uniform(0.25, 0.8, size=(d, d)) * np.where(
        rng.random((d, d)) < 0.5, -1.0, 1.0)
    corr = np.triu(corr, k=1)
    corr = corr + corr.T
    scale = np.sqrt(var)
    a = np.where(mask, corr * np.outer(scale, scale), 0.0)
    a[np.diag_indices(d)] = var
    for _ in range(max_rounds):
        try:
            np.linalg.cholesky(a)
            break
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(a)
            floor = max(1e-3, 0.05 * float(np.max(vals)))
            proj = (vecs * np.maximum(vals, floor)) @ vecs.T
            keep = mask | np.eye(d, dtype=bool)
            a = np.where(keep, (proj + proj.T) / 2, 0.0)
    else:
        raise RuntimeError("masked projection failed to reach positive definiteness")
    return a * (max_std**2 / np.max(np.diag(a)))


def _topological_order(graph: DirectedMixedGraph) -> list[int]:
    comps = strongly_connected_components(graph)
    if any(len(c) > 1 for c in comps):
        raise ValueError("graph is cyclic")
    order: list[int] = []
    indeg = graph.directed.sum(axis=0).astype(int)
    ready = [i for i in range(graph.d) if indeg[i] == 0]
    while ready:
        v = ready.pop()
        order.append(v)
        for c in np.flatnonzero(graph.directed[v]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(int(c))
    return order


def simulate(
    spec: SemSpec,
    target: frozenset[int] | set[int],
    n: int,
    rng: np.random.Generator,
    intervention_value_stddev: float = 1.0,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = 20_000,
) -> RegimeDataset:
    """Draw equilibrium samples under a hard intervention on ``target``.

    Noise z ~ N(0, Sigma_Z); intervened coordinates are clamped to i.i.d.
    N(0, stddev^2) draws. Linear mechanisms are solved exactly; tanh
    mechanisms by fixed-point iteration (contractive weights), or by
    topological substitution when the weights are non-contractive but the
    graph is acyclic.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    d = spec.graph.d
    target = frozenset(target)
    if any(i < 0 or i >= d for i in target):
        raise ValueError("target must be a subset of the vertex set")
    chol = np.linalg.cholesky(spec.sigma_z)
    z = rng.standard_normal((n, d)) @ chol.T
    c = np.zeros((n, d))
    t_idx = sorted(target)
    if t_idx:
        c[:, t_idx] = rng.normal(0.0, intervention_value_stddev, size=(n, len(t_idx)))
    u = np.ones(d)
    u[t_idx] = 0.0
    w = spec.weights
    smax = np.linalg.norm(w, 2) if w.size else 0.0

    if spec.nonlinearity == "linear":
        obs = [i for i in range(d) if i not in target]
        x = c.copy()
        if obs:
            wt = w.T
            a = np.eye(len(obs)) - wt[np.ix_(obs, obs)]
            rhs = z[:, obs]
            if t_idx:
                rhs = rhs + c[:, t_idx] @ wt[np.ix_(obs, t_idx)].T
            x[:, obs] = np.linalg.solve(a, rhs.T).T
    elif smax < 1.0:
        x = c.copy()
        for _ in range(max_iter):
            fx = u * np.tanh(x @ w + z) + c
            if np.max(np.abs(fx - x)) < tol:
                x = fx
                break
            x = fx
        else:
            raise RuntimeError("fixed-point iteration exceeded the budget; "
                               "weights are likely not contractive")
    else:
        # non-contractive weights: exact only for acyclic graphs
        order = _topological_order(spec.graph)
        x = c.copy()
        for i in order:
            if i in target:
                continue
            x[:, i] = np.tanh(x @ w[:, i] + z[:, i])
    return RegimeDataset(target, x, intervention_value_stddev)


def write_regime_csv(dataset: RegimeDataset, path: str | Path) -> None:
    """One CSV per regime: a '# target=' header then one row per sample."""
    header = "# target=" + ",".join(str(i) for i in sorted(dataset.target))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, dataset.samples, fmt="%.17g", delimiter=",")


def read_regime_csv(path: str | Path, intervention_value_stddev: float = 1.0) -> RegimeDataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# target="):
            raise ValueError(f"{path}: missing '# target=' header")
        spec = header[len("# target="):]
        target = frozenset(int(s) for s in spec.split(",") if s != "")
        body = fh.read()
    samples = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return RegimeDataset(target, samples, intervention_value_stddev)


def write_manifest(filenames: list[str], path: str | Path) -> None:
    """Regime CSV filenames, one per line, in regime order."""
    Path(path).write_text("".join(name + "\n" for name in filenames))


def read_manifest(path: str | Path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
