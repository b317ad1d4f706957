"""Experiment harness: generate synthetic interventional datasets, train
the flow model, evaluate recovery metrics, and sweep configuration grids.

Configuration is a flat ``key=value`` text file (``#`` comments allowed);
any key can be overridden on the command line with ``--set key=value``.
Every output is fully determined by the configuration and seed, and every
result row carries the configuration hash and seed.

Schema (defaults in parentheses):
    d (5)                      vertex count
    out_density (2.0)          expected outgoing edges per node
    confounder_ratio (0.4)     confounded pairs = round(ratio * d)
    sem (linear)               linear | tanh ground-truth mechanism
    contractive (true)         false generates a non-contractive DAG
    target_norm (0.8)          spectral norm of the rescaled weights
    max_noise_std (0.5)        largest exogenous noise std deviation
    n_interventions (-1)       single-node regimes; -1 means all d
    include_observational (true)
    samples_per_regime (1000)
    intervention_stddev (1.0)
    learning_rate (0.01)  lambda_sparsity (0.001)  rho_glasso (0.01)
    gumbel_temperature (1.0)  batch_size (128)  epochs (300)
    poisson_rate (2.0)  n_probe (1)
    edge_threshold (0.8)  cov_threshold (0.01)
    hidden (16)                hidden width; 0 for a single affine layer
    activation (auto)          auto | identity | tanh
    freeze_gz (false)          pin the noise-side network at zero
    seeds (0,1,2,3,4)          sweep seeds
    sweep_confounder_ratios () sweep_ds ()  sweep_interventions ()
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from dmglearn import flow as flow_mod
from dmglearn import metrics as metrics_mod
from dmglearn import sem as sem_mod
from dmglearn import training as train_mod
from dmglearn.graphs import (
    DirectedMixedGraph,
    from_edge_list,
    generate_er_dmg,
    to_edge_list,
)
from dmglearn.sem import RegimeDataset, SemSpec

__all__ = ["ExperimentConfig", "main"]


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 5
    out_density: float = 2.0
    confounder_ratio: float = 0.4
    sem: str = "linear"
    contractive: bool = True
    target_norm: float = 0.8
    max_noise_std: float = 0.5
    n_interventions: int = -1
    include_observational: bool = True
    samples_per_regime: int = 1000
    intervention_stddev: float = 1.0
    learning_rate: float = 1e-2
    lambda_sparsity: float = 1e-3
    rho_glasso: float = 1e-2
    gumbel_temperature: float = 1.0
    batch_size: int = 128
    epochs: int = 300
    poisson_rate: float = 2.0
    n_probe: int = 1
    edge_threshold: float = 0.8
    cov_threshold: float = 0.01
    hidden: int = 16
    activation: str = "auto"
    freeze_gz: bool = False
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    sweep_confounder_ratios: tuple[float, ...] = ()
    sweep_ds: tuple[int, ...] = ()
    sweep_interventions: tuple[int, ...] = ()

    def __post_init__(self):
        if self.d < 2 or self.samples_per_regime < 1:
            raise ValueError("d and samples_per_regime must be positive")
        if self.sem not in ("linear", "tanh"):
            raise ValueError("sem must be 'linear' or 'tanh'")
        if self.activation not in ("auto", "identity", "tanh"):
            raise ValueError("activation must be auto, identity, or tanh")

    def n_confounders(self, d: int | None = None) -> int:
        d = self.d if d is None else d
        return int(np.clip(round(self.confounder_ratio * d), 0, d * (d - 1) // 2))

    def intervention_plan(self, d: int | None = None) -> list[frozenset[int]]:
        d = self.d if d is None else d
        k = d if self.n_interventions < 0 else min(self.n_interventions, d)
        plan = [frozenset()] if self.include_observational else []
        plan += [frozenset({i}) for i in range(k)]
        if not plan:
            raise ValueError("the intervention plan is empty")
        return plan

    def resolved_activation(self) -> str:
        if self.activation != "auto":
            return self.activation
        return "identity" if self.sem == "linear" else "tanh"

    def train_config(self, seed: int) -> train_mod.TrainConfig:
        return train_mod.TrainConfig(
            learning_rate=self.learning_rate,
            lambda_sparsity=self.lambda_sparsity,
            rho_glasso=self.rho_glasso,
            gumbel_temperature=self.gumbel_temperature,
            batch_size=self.batch_size,
            epochs=self.epochs,
            truncation=flow_mod.TruncationDistribution("poisson", self.poisson_rate),
            n_probe=self.n_probe,
            edge_threshold=self.edge_threshold,
            cov_threshold=self.cov_threshold,
            seed=seed,
            hidden=(self.hidden,) if self.hidden > 0 else (),
            activation=self.resolved_activation(),
            freeze_gz=self.freeze_gz,
        )

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_BOOL_KEYS = {"contractive", "include_observational", "freeze_gz"}
_INT_KEYS = {"d", "n_interventions", "samples_per_regime", "batch_size",
             "epochs", "n_probe", "hidden"}
_TUPLE_INT_KEYS = {"seeds", "sweep_ds", "sweep_interventions"}
_TUPLE_FLOAT_KEYS = {"sweep_confounder_ratios"}
_STR_KEYS = {"sem", "activation"}


def _coerce(key: str, value: str):
    value = value.strip()
    if key in _BOOL_KEYS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key} must be a boolean, got {value!r}")
    if key in _INT_KEYS:
        return int(value)
    if key in _TUPLE_INT_KEYS:
        return tuple(int(s) for s in value.split(",") if s != "")
    if key in _TUPLE_FLOAT_KEYS:
        return tuple(float(s) for s in value.split(",") if s != "")
    if key in _STR_KEYS:
        return value
    return float(value)


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    values: dict = {}
    if path:
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw!r}")
            key, val = line.split("=", 1)
            values[key.strip()] = val
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = val
    fields = ExperimentConfig.__dataclass_fields__
    unknown = set(values) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})


def cmd_generate(config: ExperimentConfig, seed: int, out_dir: str) -> Path:
    """Write regime CSVs, a manifest, and the ground truth to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    d = config.d
    graph = generate_er_dmg(d, config.out_density, config.n_confounders(), rng)
    if not config.contractive:
        # acyclic ground truth: keep only edges respecting a random order
        order = rng.permutation(d)
        rank = np.empty(d, dtype=int)
        rank[order] = np.arange(d)
        keep = rank[:, None] < rank[None, :]
        graph = DirectedMixedGraph(graph.directed & keep, graph.bidirected)
    weights = sem_mod.sample_weights(graph, rng)
    if config.contractive:
        weights = sem_mod.make_contractive(weights, config.target_norm)
    elif np.any(weights):
        weights = sem_mod.set_spectral_norm(weights, 2.0 - rng.random())
    sigma = sem_mod.sample_confounder_covariance(graph, config.max_noise_std, rng)
    spec = SemSpec(graph, weights, config.sem, sigma)
    names = []
    for k, target in enumerate(config.intervention_plan()):
        ds = sem_mod.simulate(spec, target, config.samples_per_regime, rng,
                              config.intervention_stddev)
        name = f"regime_{k:03d}.csv"
        sem_mod.write_regime_csv(ds, out / name)
        names.append(name)
    sem_mod.write_manifest(names, out / "manifest.txt")
    (out / "truth_graph.txt").write_text(to_edge_list(graph))
    np.savetxt(out / "truth_sigma.csv", sigma, delimiter=",", fmt="%.17g")
    np.savetxt(out / "truth_weights.csv", weights, delimiter=",", fmt="%.17g")
    (out / "meta.json").write_text(json.dumps({
        "seed": seed,
        "config_hash": config.config_hash(),
        "config": asdict(config),
    }, indent=2, default=list) + "\n")
    return out


def _load_dataset(data_dir: str) -> tuple[list[RegimeDataset], dict]:
    data = Path(data_dir)
    manifest = data / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"missing manifest: {manifest}")
    meta = {}
    meta_path = data / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    stddev = meta.get("config", {}).get("intervention_stddev", 1.0)
    datasets = [
        sem_mod.read_regime_csv(data / name, stddev)
        for name in sem_mod.read_manifest(manifest)
    ]
    return datasets, meta


def cmd_train(data_dir: str, config: ExperimentConfig, seed: int, out_dir: str) -> Path:
    """Train on a generated dataset directory; writes checkpoint.npz and
    train_log.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets, _ = _load_dataset(data_dir)
    tc = config.train_config(seed)
    with open(out / "train_log.jsonl", "w") as log:
        model = train_mod.train(datasets, tc, log_stream=log)
    flow_mod.save_model(model, out / "checkpoint.npz")
    return out / "checkpoint.npz"


RESULT_COLUMNS = [
    "experiment", "seed", "d", "confounder_ratio", "config_hash", "status",
    "shd", "shd_normalized", "f1_bidirected", "auprc_directed",
    "auprc_bidirected", "nll",
]


def _evaluate_model(model, datasets, truth_graph, config: ExperimentConfig,
                    seed: int, with_nll: bool) -> dict:
    from scipy.special import expit

    d = model.d
    if truth_graph is not None and truth_graph.d != d:
        raise ValueError("model and ground truth dimensions differ")
    if datasets and datasets[0].d != d:
        raise ValueError("model and dataset dimensions differ")
    row = {
        "experiment": "evaluate",
        "seed": seed,
        "d": d,
        "confounder_ratio": config.confounder_ratio,
        "config_hash": config.config_hash(),
        "status": "ok",
    }
    if truth_graph is not None:
        tc = config.train_config(seed)
        g_hat = train_mod.extract_graph(model, tc)
        row["shd"] = metrics_mod.shd(g_hat.directed, truth_graph.directed)
        row["shd_normalized"] = metrics_mod.shd_normalized(
            g_hat.directed, truth_graph.directed)
        row["f1_bidirected"] = metrics_mod.f1_bidirected(
            model.sigma_z_hat, truth_graph, config.cov_threshold)
        probs = expit(model.edge_logits)
        off = ~np.eye(d, dtype=bool)
        directed_scored = list(zip(probs[off].tolist(),
                                   truth_graph.directed[off].tolist()))
        if truth_graph.directed.any():
            row["auprc_directed"] = metrics_mod.auprc(directed_scored)
        upper = np.triu_indices(d, k=1)
        bidirected_scored = list(zip(
            np.abs(model.sigma_z_hat[upper]).tolist(),
            truth_graph.bidirected[upper].tolist()))
        if truth_graph.bidirected.any():
            row["auprc_bidirected"] = metrics_mod.auprc(bidirected_scored)
    if with_nll and datasets:
        rng = np.random.default_rng(seed)
        nlls = []
        weights = []
        for ds in datasets:
            idx = rng.permutation(ds.n)
            n_test = max(1, ds.n // 10)
            test = RegimeDataset(ds.target, ds.samples[idx[:n_test]],
                                 ds.intervention_value_stddev)
            nlls.append(train_mod.mean_nll(model, test, config.edge_threshold))
            weights.append(n_test)
        row["nll"] = float(np.average(nlls, weights=weights))
    return row


def cmd_evaluate(checkpoint: str, data_dir: str, config: ExperimentConfig,
                 seed: int, out_csv: str, with_nll: bool) -> dict:
    """Score a checkpoint against the dataset's ground truth and optional
    held-out negative log-likelihood; appends one CSV row."""
    model = flow_mod.load_model(checkpoint)
    datasets, _ = _load_dataset(data_dir)
    truth_path = Path(data_dir) / "truth_graph.txt"
    truth = from_edge_list(truth_path.read_text()) if truth_path.exists() else None
    row = _evaluate_model(model, datasets, truth, config, seed, with_nll)
    _append_rows(out_csv, [row])
    return row


def _append_rows(out_csv: str, rows: list[dict]) -> None:
    path = Path(out_csv)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _run_cell(args) -> list[dict]:
    """One sweep cell x seed: generate, train, evaluate, in isolation."""
    config_dict, seed, work_dir, label = args
    config = ExperimentConfig(**config_dict)
    rows = []
    try:
        cell_dir = Path(work_dir) / label / f"seed_{seed}"
        data_dir = cell_dir / "data"
        cmd_generate(config, seed, data_dir)
        ckpt = cmd_train(data_dir, config, seed, cell_dir)
        model = flow_mod.load_model(ckpt)
        datasets, _ = _load_dataset(data_dir)
        truth = from_edge_list((data_dir / "truth_graph.txt").read_text())
        row = _evaluate_model(model, datasets, truth, config, seed, with_nll=True)
        row["experiment"] = label
        rows.append(row)
    except Exception as err:  # record the failure, keep sweeping
        rows.append({
            "experiment": label, "seed": seed, "d": config.d,
            "confounder_ratio": config.confounder_ratio,
            "config_hash": config.config_hash(),
            "status": f"failed: {type(err).__name__}: {err}",
        })
    return rows


def cmd_sweep(config: ExperimentConfig, out_dir: str, threads: int = 1) -> Path:
    """Cross-product of the sweep grids times seeds; per-run rows plus one
    aggregate (mean, std) row per cell are written to results.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = config.sweep_ds or (config.d,)
    ratios = config.sweep_confounder_ratios or (config.confounder_ratio,)
    interventions = config.sweep_interventions or (config.n_interventions,)
    cells = list(itertools.product(ds, ratios, interventions))
    if not cells or not config.seeds:
        raise ValueError("sweep grid is empty")
    jobs = []
    for d, ratio, n_int in cells:
        cell_cfg = replace(config, d=d, confounder_ratio=ratio,
                           n_interventions=n_int)
        label = f"d{d}_r{ratio}_k{n_int}"
        for seed in config.seeds:
            jobs.append((asdict(cell_cfg), seed, str(out / "runs"), label))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    rows = [row for rows_ in results for row in rows_]
    by_label: dict[str, list[dict]] = {}
    for row in rows:
        by_label.setdefault(row["experiment"], []).append(row)
    agg_rows = []
    for label, cell_rows in by_label.items():
        ok = [r for r in cell_rows if r.get("status") == "ok"]
        agg = {
            "experiment": f"{label}/aggregate",
            "seed": "",
            "d": cell_rows[0]["d"],
            "confounder_ratio": cell_rows[0]["confounder_ratio"],
            "config_hash": cell_rows[0]["config_hash"],
            "status": f"ok={len(ok)}/{len(cell_rows)}",
        }
        for col in ("shd", "shd_normalized", "f1_bidirected",
                    "auprc_directed", "auprc_bidirected", "nll"):
            vals = [r[col] for r in ok if col in r and r[col] != ""]
            if vals:
                agg[col] = f"{np.mean(vals):.6g}+-{np.std(vals):.6g}"
        agg_rows.append(agg)
    _append_rows(out / "results.csv", rows + agg_rows)
    return out / "results.csv"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dmglearn",
        description="cyclic causal discovery with latent confounders",
    )
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output file or directory")
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write a synthetic dataset directory")
    p_train = sub.add_parser("train", help="train a model on a dataset")
    p_train.add_argument("--data", required=True)
    p_eval = sub.add_parser("evaluate", help="score a trained checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--nll", action="store_true",
                        help="also report held-out negative log-likelihood")
    sub.add_parser("sweep", help="run a configuration grid")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.set)
        if args.command == "generate":
            cmd_generate(config, args.seed, args.out)
        elif args.command == "train":
            cmd_train(args.data, config, args.seed, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(args.checkpoint, args.data, config, args.seed,
                         args.out, args.nll)
        elif args.command == "sweep":
            cmd_sweep(config, args.out, args.threads)
    except Exception as err:
        print("ERROR " + json.dumps({
            "command": args.command,
            "type": type(err).__name__,
            "message": str(err),
        }), file=sys.stderr)
        if "--debug" in (argv or sys.argv):
            traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
