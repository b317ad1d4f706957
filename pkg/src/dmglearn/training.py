"""Structure learning: penalized-likelihood score, straight-through
adjacency sampling, Adam updates, and the alternating training loop.

Each visit to a regime performs one stochastic ascent step on the network
parameters and edge logits (with the noise covariance held fixed),
followed by one column-sweep update of the covariance block on the
non-intervened coordinates computed from fresh noise residuals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from dmglearn import covariance as cov_est
from dmglearn import flow as flow_mod
from dmglearn import nnet
from dmglearn.flow import FlowModel, TruncationDistribution
from dmglearn.graphs import DirectedMixedGraph
from dmglearn.sem import RegimeDataset

__all__ = [
    "TrainConfig",
    "AdamState",
    "sample_adjacency",
    "adam_step",
    "init_model",
    "minibatch_score",
    "train",
    "extract_graph",
    "mean_nll",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    lambda_sparsity: float = 1e-3
    rho_glasso: float = 1e-2
    gumbel_temperature: float = 1.0
    batch_size: int = 128
    epochs: int = 200
    truncation: TruncationDistribution = field(default_factory=TruncationDistribution)
    n_probe: int = 1
    edge_threshold: float = 0.8
    cov_threshold: float = 0.01
    seed: int = 0
    # model architecture
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"
    shared_weights: bool = False
    lipschitz_cap: float = 0.9
    freeze_gz: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.rho_glasso, self.edge_threshold,
               self.cov_threshold) <= 0 or self.lambda_sparsity < 0:
            raise ValueError("rates and thresholds must be positive")
        if self.gumbel_temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.n_probe < 1:
            raise ValueError("invalid size parameters")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999,
                  eps=1e-8) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0, beta1, beta2, eps,
        )


def sample_adjacency(
    edge_logits: np.ndarray, temperature: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Straight-through adjacency draw.

    The hard mask is Bernoulli(sigmoid(logits)) entrywise; the soft mask is
    the Gumbel-sigmoid relaxation built from the same uniform draws, so
    hard and soft agree in the zero-temperature limit and gradients flow
    through the soft values. Diagonals are forced off.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    b = np.asarray(edge_logits, dtype=float)
    d = b.shape[0]
    uni = np.clip(rng.random((d, d)), 1e-12, 1.0 - 1e-12)
    logistic = np.log(uni) - np.log1p(-uni)
    hard = (b + logistic) > 0
    soft = expit((b + logistic) / temperature)
    np.fill_diagonal(hard, False)
    np.fill_diagonal(soft, 0.0)
    return hard, soft


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam ASCENT step (the score is maximized); parameter
    arrays are updated in place."""
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for key, p in params.items():
        g = grads[key]
        state.m[key] = b1 * state.m[key] + (1 - b1) * g
        state.v[key] = b2 * state.v[key] + (1 - b2) * g * g
        m_hat = state.m[key] / (1 - b1**t)
        v_hat = state.v[key] / (1 - b2**t)
        p += learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def init_model(d: int, config: TrainConfig, rng: np.random.Generator) -> FlowModel:
    g_x = nnet.masked_mlp(d, config.hidden, config.activation, "adjacency",
                          config.shared_weights, config.lipschitz_cap, rng)
    g_z = nnet.masked_mlp(d, config.hidden, config.activation, "identity",
                          config.shared_weights, config.lipschitz_cap, rng)
    if config.freeze_gz:
        for w in g_z.weights:
            w[:] = 0.0
    return FlowModel(g_x, g_z, np.zeros((d, d)), np.eye(d),
                     gz_frozen=config.freeze_gz)


def minibatch_score(
    model: FlowModel,
    batch: np.ndarray,
    target,
    config: TrainConfig,
    rng: np.random.Generator,
    intervention_stddev: float = 1.0,
    logdet_mode: str = "stochastic",
) -> tuple[float, dict[str, np.ndarray]]:
    """Penalized log-likelihood of one minibatch under a fresh adjacency
    sample, with ascent gradients for the mechanism parameters and logits.

    score = sum_n log_density(x_n) - lambda * ||soft mask||_1; the logit
    gradient combines the straight-through likelihood term with the exact
    -lambda penalty on every off-diagonal soft entry.
    """
    d = model.d
    batch = np.asarray(batch, dtype=float).reshape(-1, d)
    hard, soft = sample_adjacency(model.edge_logits, config.gumbel_temperature, rng)
    mask = hard.astype(float)
    off = ~np.eye(d, dtype=bool)
    if batch.shape[0] > 0:
        z = flow_mod.forward_map(model, mask, target, batch)
        if logdet_mode == "stochastic":
            logdet = flow_mod.logdet_estimate(model, mask, target, batch,
                                              config.truncation, config.n_probe,
                                              rng, z=z)
        else:
            logdet = flow_mod.logdet_exact(model, mask, target, batch, z=z)
        ll = flow_mod.log_density(model, mask, target, batch, logdet,
                                  intervention_stddev, z=z)
        score = float(np.sum(ll))
        fg = flow_mod.implicit_gradients(
            model, mask, target, batch, np.ones(batch.shape[0]),
            logdet_mode=logdet_mode, trunc=config.truncation,
            n_probe=config.n_probe, rng=rng,
            intervention_stddev=intervention_stddev, z=z,
        )
        grads = fg.params
        mask_grad = fg.mask
    else:
        score = 0.0
        grads = {k: np.zeros_like(p) for k, p in model.param_dict().items()}
        mask_grad = np.zeros((d, d))
    score -= config.lambda_sparsity * float(soft[off].sum())
    dsoft_db = soft * (1.0 - soft) / config.gumbel_temperature
    logit_grad = (mask_grad - config.lambda_sparsity * off) * dsoft_db
    np.fill_diagonal(logit_grad, 0.0)
    grads["edge_logits"] = logit_grad
    return score, grads


def _covariance_update(model: FlowModel, dataset: RegimeDataset,
                       config: TrainConfig, rng: np.random.Generator) -> None:
    d = model.d
    target = dataset.target
    if len(target) >= d:
        return  # every node intervened: no observed block to update
    # residuals under the current modal graph; a Bernoulli draw here would
    # bake one unlucky mask sample into the covariance estimate
    mask = (expit(model.edge_logits) > 0.5).astype(float)
    np.fill_diagonal(mask, 0.0)
    z = flow_mod.forward_map(model, mask, target, dataset.samples)
    obs = [i for i in range(d) if i not in target]
    s = cov_est.sample_covariance(z[:, obs])
    block = cov_est.restrict_to_observed(model.sigma_z_hat, target)
    try:
        block, _ = cov_est.glasso_sweep(block, s, config.rho_glasso)
    except RuntimeError:
        # warm start became indefinite against the fresh statistics:
        # restart the block from the standard cold initialization
        block, _ = cov_est.glasso_sweep(s + config.rho_glasso * np.eye(len(obs)),
                                        s, config.rho_glasso)
    sigma = cov_est.write_back_observed(model.sigma_z_hat, block, target)
    sigma = (sigma + sigma.T) / 2
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        # stale rows of the intervened coordinates can clash with the
        # refreshed block; repair by flooring the spectrum well away from
        # singular (an almost-singular estimate explodes the score)
        vals, vecs = np.linalg.eigh(sigma)
        floor = max(1e-8, 1e-2 * float(np.median(np.diag(sigma))))
        sigma = (vecs * np.maximum(vals, floor)) @ vecs.T
        sigma = (sigma + sigma.T) / 2
    model.sigma_z_hat = sigma


def train(
    datasets: list[RegimeDataset],
    config: TrainConfig,
    log_stream=None,
) -> FlowModel:
    """Alternating optimization over epochs x regimes.

    Per regime visit: one Adam ascent step on (theta, logits) from a
    minibatch score with the covariance fixed, spectral renormalization to
    keep the mechanisms contractive, then one graphical-lasso sweep of the
    covariance block on the regime's observed coordinates using fresh
    forward-map residuals. Progress records (epoch, regime, score,
    covariance log-determinant) are written to ``log_stream`` as JSON
    lines when provided.
    """
    if not datasets:
        raise ValueError("need at least one regime dataset")
    d = datasets[0].d
    if any(ds.d != d for ds in datasets):
        raise ValueError("regimes must share the dimension")
    rng = np.random.default_rng(config.seed)
    model = init_model(d, config, rng)
    state = AdamState.init_like(model.param_dict(), config.adam_beta1,
                                config.adam_beta2, config.adam_eps)
    consecutive_failures = 0
    for epoch in range(config.epochs):
        for k, ds in enumerate(datasets):
            try:
                take = min(config.batch_size, ds.n)
                idx = rng.permutation(ds.n)[:take]
                score, grads = minibatch_score(
                    model, ds.samples[idx], ds.target, config, rng,
                    intervention_stddev=ds.intervention_value_stddev,
                )
                params = model.param_dict()
                adam_step(params, grads, state, config.learning_rate)
                nnet.spectral_normalize(model.g_x, rng)
                if not model.gz_frozen:
                    nnet.spectral_normalize(model.g_z, rng)
                _covariance_update(model, ds, config, rng)
                consecutive_failures = 0
            except RuntimeError as err:
                consecutive_failures += 1
                if consecutive_failures >= 5:
                    raise RuntimeError(
                        f"training aborted at epoch {epoch}, regime {k}: {err}"
                    ) from err
                continue
            if log_stream is not None:
                _, sigma_logdet = np.linalg.slogdet(model.sigma_z_hat)
                log_stream.write(json.dumps({
                    "epoch": epoch, "regime": k, "score": score,
                    "sigma_logdet": float(sigma_logdet),
                }) + "\n")
    return model


def extract_graph(model: FlowModel, config: TrainConfig) -> DirectedMixedGraph:
    """Threshold edge beliefs and covariance magnitudes into a graph."""
    probs = expit(model.edge_logits)
    directed = probs > config.edge_threshold
    np.fill_diagonal(directed, False)
    bidirected = np.abs(model.sigma_z_hat) > config.cov_threshold
    bidirected = bidirected | bidirected.T
    np.fill_diagonal(bidirected, False)
    return DirectedMixedGraph(directed, bidirected)


def mean_nll(model: FlowModel, dataset: RegimeDataset,
             edge_threshold: float = 0.8) -> float:
    """Mean per-sample negative log-density on a dataset, exact log-det
    path, with the adjacency thresholded from the edge beliefs."""
    probs = expit(model.edge_logits)
    mask = (probs > edge_threshold).astype(float)
    np.fill_diagonal(mask, 0.0)
    z = flow_mod.forward_map(model, mask, dataset.target, dataset.samples)
    logdet = flow_mod.logdet_exact(model, mask, dataset.target, dataset.samples, z=z)
    ll = flow_mod.log_density(model, mask, dataset.target, dataset.samples,
                              logdet, dataset.intervention_value_stddev, z=z)
    return float(-np.mean(ll))
