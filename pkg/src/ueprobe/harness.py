"""Experiment harness: trains the requested methods, sweeps probe inputs,
and serializes deterministic uncertainty reports.

Every experiment is a pure function of (seed, options): training, probe
generation, and evaluation all draw from seeds derived via purpose tags, so a
rerun with the same config is byte-identical. Report rows always carry the
class-1 probability and its entropy in nats; aggregate curves live in the
report metadata so each row stays internally consistent.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import store
from .bnn import HMCConfig, hmc_sample, mfvi_train, posterior_predict, sample_posterior
from .datasets import Dataset, filter_classes, grid2d, load_idx, make_toy2d, probe_sweep
from .errors import CheckFailure, NumericalError
from .gp import (
    KernelParams,
    default_length_scale_grid,
    fit_hyperparams,
    kernel_matrix,
    laplace_fit,
    predict_proba_many,
    training_accuracy,
)
from .mcdropout import MCDropoutConfig, mc_average
from .nnet import TrainConfig, accuracy, encode, mlp_init, train
from .numerics import LN2, RngStream, binary_entropy, derive_seed

log = logging.getLogger(__name__)

METHODS = ("gp", "mcdropout", "mfvi", "hmc")
EXPERIMENTS = ("toy2d", "mnist-interp", "digit-table", "theorem-check")


@dataclass(frozen=True)
class ReportRow:
    probe_id: str
    method: str
    descriptor: str
    p_class1: float
    entropy_nats: float


@dataclass
class UncertaintyReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        seen = set()
        for row in self.rows:
            key = (row.probe_id, row.method)
            if key in seen:
                raise NumericalError(f"duplicate report row {key}")
            seen.add(key)
            if not 0.0 <= row.p_class1 <= 1.0:
                raise NumericalError(f"p_class1 {row.p_class1} outside [0, 1] in {key}")
            if not -1e-12 <= row.entropy_nats <= LN2 + 1e-9:
                raise NumericalError(f"entropy {row.entropy_nats} outside [0, ln 2] in {key}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("methods must be nonempty")
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}, expected subset of {METHODS}")
        # canonical order regardless of how the caller listed them
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in methods))


def default_options(experiment: str) -> dict:
    """Per-experiment defaults; any key can be overridden via config file or CLI."""
    common = {"save_models": "", "load_models": ""}
    common_mnist = {
        **common,
        "mnist_train_images": "",
        "mnist_train_labels": "",
        "mnist_test_images": "",
        "mnist_test_labels": "",
    }
    if experiment == "toy2d":
        return {
            **common,
            "n_per_class": 200,
            "grid_min": -6.0,
            "grid_max": 6.0,
            "resolution": 100,
            "gp.link": "probit",
            "gp.signal_variance": 1.0,
            "gp.grid_scale": 1.0,
            "mcdropout.arch": [2, 300, 2],
            "mcdropout.dropout": 0.5,
            "mcdropout.epochs": 50,
            "mcdropout.learning_rate": 1e-3,
            "mcdropout.batch_size": 64,
            "mcdropout.n_passes": 100,
            "mfvi.arch": [2, 512, 128, 2],
            "mfvi.kl_weight": 0.1,
            "mfvi.prior_precision": 1.0,
            "mfvi.epochs": 150,
            "mfvi.learning_rate": 1e-3,
            "mfvi.batch_size": 64,
            "mfvi.predict_draws": 100,
            "hmc.arch": [2, 512, 128, 2],
            "hmc.prior_precision": 5.0,
            "hmc.step_size": 5e-4,
            "hmc.trajectory_length": 3,
            "hmc.n_samples": 300,
            "hmc.burn_in": 200,
            "hmc.map_epochs": 50,
        }
    if experiment == "mnist-interp":
        return {
            **common_mnist,
            "n_pairs": 100,
            "t_steps": 31,
            "encoder.arch": [784, 600, 20, 2],
            "encoder.dropout": 0.6,
            "encoder.epochs": 20,
            "encoder.learning_rate": 1e-3,
            "encoder.batch_size": 64,
            "gp.link": "probit",
            "gp.signal_variance": 1.0,
            "gp.grid_scale": "median",
            "gp.subsample": 2000,
            "mcdropout.arch": [784, 500, 2],
            "mcdropout.dropout": 0.6,
            "mcdropout.epochs": 20,
            "mcdropout.learning_rate": 1e-3,
            "mcdropout.batch_size": 64,
            "mcdropout.n_passes": 100,
            "mfvi.arch": [784, 1024, 128, 2],
            "mfvi.kl_weight": 0.1,
            "mfvi.prior_precision": 1.0,
            "mfvi.epochs": 15,
            "mfvi.learning_rate": 1e-3,
            "mfvi.batch_size": 64,
            "mfvi.predict_draws": 100,
            "hmc.arch": [784, 1024, 128, 2],
            "hmc.prior_precision": 5.0,
            "hmc.step_size": 5e-4,
            "hmc.trajectory_length": 3,
            "hmc.n_samples": 60,
            "hmc.burn_in": 50,
            "hmc.map_epochs": 5,
        }
    if experiment == "digit-table":
        return {
            **common_mnist,
            "mcdropout.arch": [784, 500, 2],
            "mcdropout.dropout": 0.6,
            "mcdropout.epochs": 20,
            "mcdropout.learning_rate": 1e-3,
            "mcdropout.batch_size": 64,
            "mcdropout.n_passes": 100,
        }
    if experiment == "theorem-check":
        return {
            **common,
            "n_per_class": 200,
            "length_scale": 1.0,
            "signal_variance": 1.0,
            "link": "probit",
            "ray_distances": [4.0, 5.0, 6.0, 8.0, 10.0, 11.0, 12.0, 14.0, 16.0, 20.0, 25.0, 30.0],
        }
    raise ValueError(f"unknown experiment {experiment!r}")


def merged_options(cfg: ExperimentConfig) -> dict:
    opt = default_options(cfg.experiment)
    for key, value in cfg.options.items():
        if key not in opt:
            raise ValueError(f"unknown option {key!r} for experiment {cfg.experiment}")
        opt[key] = value
    return opt


def config_digest(cfg: ExperimentConfig) -> str:
    """Stable hash of the fully merged configuration."""
    opt = merged_options(cfg)
    lines = [f"experiment={cfg.experiment}", f"seed={cfg.seed}", f"methods={','.join(cfg.methods)}"]
    lines += [f"{k}={opt[k]}" for k in sorted(opt)]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _eval_threads() -> int:
    raw = os.environ.get("UE_PROBE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _file_sha256(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


class _ModelStore:
    """Load-or-train helper tracking content hashes of every model file touched."""

    def __init__(self, save_dir, load_dir):
        self.save_dir = save_dir or None
        self.load_dir = load_dir or None
        self.hashes: dict[str, str] = {}

    def obtain(self, name, loader, saver, trainer):
        if self.load_dir:
            path = os.path.join(self.load_dir, f"{name}.uep")
            if os.path.exists(path):
                model = loader(path)
                self.hashes[name] = _file_sha256(path)
                log.info("loaded %s from %s", name, path)
                return model
        model = trainer()
        if self.save_dir:
            os.makedirs(self.save_dir, exist_ok=True)
            path = os.path.join(self.save_dir, f"{name}.uep")
            saver(path, model)
            self.hashes[name] = _file_sha256(path)
            log.info("saved %s to %s", name, path)
        return model


def _base_metadata(cfg: ExperimentConfig, opt: dict) -> dict:
    return {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "methods": list(cfg.methods),
        "config_digest": config_digest(cfg),
        "entropy_units": "nats",
        "options": {k: opt[k] for k in sorted(opt)},
        "model_hashes": {},
    }


def _evaluate_methods(predictors: dict, points: np.ndarray) -> dict[str, np.ndarray]:
    """Run each method's batched predictor over the shared probe set.

    UE_PROBE_THREADS > 1 evaluates methods concurrently; results merge by
    method name, so thread count never changes the output.
    """
    n_threads = min(_eval_threads(), len(predictors))
    if n_threads <= 1:
        return {m: np.asarray(fn(points), dtype=np.float64) for m, fn in predictors.items()}
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = {m: pool.submit(fn, points) for m, fn in predictors.items()}
        return {m: np.asarray(fut.result(), dtype=np.float64) for m, fut in futures.items()}


def _train_config(opt: dict, prefix: str, seed: int, tag: str) -> TrainConfig:
    return TrainConfig(
        optimizer="adam",
        learning_rate=float(opt[f"{prefix}.learning_rate"]),
        batch_size=int(opt[f"{prefix}.batch_size"]),
        epochs=int(opt[f"{prefix}.epochs"]),
        dropout_rate=float(opt[f"{prefix}.dropout"]),
        seed=derive_seed(seed, f"{tag}-train"),
    )


def _build_gp_toy(d: Dataset, seed: int, opt: dict):
    grid = default_length_scale_grid(_grid_scale(opt, d.features), float(opt["gp.signal_variance"]))
    params, state = fit_hyperparams(d, grid, link=str(opt["gp.link"]))
    info = {
        "length_scale": params.length_scale,
        "log_marginal": state.log_marginal,
        "train_accuracy": training_accuracy(state),
    }
    return (lambda pts: predict_proba_many(state, pts)[:, 1]), info


def _build_mcdropout(d: Dataset, seed: int, opt: dict, models: _ModelStore):
    arch = [int(v) for v in opt["mcdropout.arch"]]
    tc = _train_config(opt, "mcdropout", seed, "mcdropout")
    params = models.obtain(
        "mcdropout",
        store.load_mlp,
        store.save_mlp,
        lambda: train(mlp_init(arch, seed=derive_seed(seed, "mcdropout-init")), d, tc),
    )
    mc_cfg = MCDropoutConfig(
        n_samples=int(opt["mcdropout.n_passes"]),
        dropout_rate=float(opt["mcdropout.dropout"]),
        seed=derive_seed(seed, "mcdropout-eval"),
    )
    info = {"train_accuracy": accuracy(params, d.features, d.labels)}
    return (lambda pts: mc_average(params, pts, mc_cfg)[:, 1]), info, params


def _build_mfvi(d: Dataset, seed: int, opt: dict, models: _ModelStore):
    arch = [int(v) for v in opt["mfvi.arch"]]
    posterior = models.obtain(
        "mfvi",
        store.load_mfvi,
        store.save_mfvi,
        lambda: mfvi_train(
            arch,
            d,
            epochs=int(opt["mfvi.epochs"]),
            kl_weight=float(opt["mfvi.kl_weight"]),
            prior_precision=float(opt["mfvi.prior_precision"]),
            seed=derive_seed(seed, "mfvi"),
            learning_rate=float(opt["mfvi.learning_rate"]),
            batch_size=int(opt["mfvi.batch_size"]),
        ),
    )
    draws = sample_posterior(
        posterior,
        int(opt["mfvi.predict_draws"]),
        RngStream(derive_seed(seed, "mfvi-eval")),
    )
    mean_net = posterior.mean_params()
    info = {"train_accuracy": accuracy(mean_net, d.features, d.labels)}
    return (lambda pts: posterior_predict(draws, pts, arch)[:, 1]), info, posterior


def _build_hmc(d: Dataset, seed: int, opt: dict, models: _ModelStore):
    arch = [int(v) for v in opt["hmc.arch"]]
    cfg = HMCConfig(
        step_size=float(opt["hmc.step_size"]),
        trajectory_length=int(opt["hmc.trajectory_length"]),
        n_samples=int(opt["hmc.n_samples"]),
        burn_in=int(opt["hmc.burn_in"]),
        prior_precision=float(opt["hmc.prior_precision"]),
        seed=derive_seed(seed, "hmc"),
    )
    chain = models.obtain(
        "hmc",
        store.load_chain,
        store.save_chain,
        lambda: hmc_sample(d, arch, cfg, map_epochs=int(opt["hmc.map_epochs"])),
    )
    train_probs = posterior_predict(chain.samples, d.features, arch)
    info = {
        "accept_rate": chain.accept_rate,
        "train_accuracy": float(np.mean(np.argmax(train_probs, axis=1) == d.labels)),
    }
    return (lambda pts: posterior_predict(chain.samples, pts, arch)[:, 1]), info, chain


def run_toy2d(cfg: ExperimentConfig) -> UncertaintyReport:
    """Train each requested method on the 2D toy data and sweep the eval grid."""
    opt = merged_options(cfg)
    models = _ModelStore(opt.get("save_models"), opt.get("load_models"))
    d = make_toy2d(int(opt["n_per_class"]), cfg.seed)
    lo, hi = float(opt["grid_min"]), float(opt["grid_max"])
    points = grid2d(lo, hi, lo, hi, int(opt["resolution"]))

    predictors: dict = {}
    method_info: dict = {}
    for method in cfg.methods:
        log.info("toy2d: preparing %s", method)
        if method == "gp":
            predictors[method], method_info[method] = _build_gp_toy(d, cfg.seed, opt)
        elif method == "mcdropout":
            predictors[method], method_info[method], _ = _build_mcdropout(d, cfg.seed, opt, models)
        elif method == "mfvi":
            predictors[method], method_info[method], _ = _build_mfvi(d, cfg.seed, opt, models)
        elif method == "hmc":
            predictors[method], method_info[method], _ = _build_hmc(d, cfg.seed, opt, models)

    p1 = _evaluate_methods(predictors, points)
    report = UncertaintyReport(metadata=_base_metadata(cfg, opt))
    report.metadata["method_info"] = method_info
    report.metadata["model_hashes"] = models.hashes
    for method in cfg.methods:
        ent = binary_entropy(p1[method])
        for i, (x, y) in enumerate(points):
            report.rows.append(
                ReportRow(
                    probe_id=f"grid_{i:05d}",
                    method=method,
                    descriptor=f"x={x:.9g};y={y:.9g}",
                    p_class1=float(p1[method][i]),
                    entropy_nats=float(ent[i]),
                )
            )
    report.validate()
    return report


def _load_mnist_pair(opt: dict, split: str) -> Dataset:
    images = opt[f"mnist_{split}_images"]
    labels = opt[f"mnist_{split}_labels"]
    if not images or not labels:
        raise ValueError(f"missing MNIST {split} file paths in options")
    return load_idx(images, labels)


def _subsample(d: Dataset, n: int, seed: int) -> Dataset:
    if n >= d.n_samples:
        return d
    keep = np.sort(RngStream(seed).permutation(d.n_samples)[:n])
    return Dataset(d.features[keep], d.labels[keep], source=d.source)


def _median_pairwise_distance(x: np.ndarray, cap: int = 512) -> float:
    x = x[:cap]
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    upper = d2[np.triu_indices(len(x), k=1)]
    med = float(np.sqrt(np.clip(np.median(upper), 0.0, None)))
    return med if med > 0 else 1.0


def _grid_scale(opt: dict, features: np.ndarray) -> float:
    raw = opt["gp.grid_scale"]
    if isinstance(raw, str) and raw == "median":
        # anchor the length-scale search at the data's own distance scale
        return _median_pairwise_distance(features)
    return float(raw)


def _build_gp_mnist(train01: Dataset, seed: int, opt: dict, models: _ModelStore):
    arch = [int(v) for v in opt["encoder.arch"]]
    tc = _train_config(opt, "encoder", seed, "encoder")
    encoder = models.obtain(
        "gp_encoder",
        store.load_mlp,
        store.save_mlp,
        lambda: train(mlp_init(arch, seed=derive_seed(seed, "encoder-init")), train01, tc),
    )
    fit_data = _subsample(train01, int(opt["gp.subsample"]), derive_seed(seed, "gp-subsample"))
    embeddings = encode(encoder, fit_data.features, 2)
    enc_dataset = Dataset(embeddings, fit_data.labels, source=fit_data.source)
    scale = _grid_scale(opt, embeddings)
    grid = default_length_scale_grid(scale, float(opt["gp.signal_variance"]))
    params, state = fit_hyperparams(enc_dataset, grid, link=str(opt["gp.link"]))
    info = {
        "length_scale": params.length_scale,
        "grid_scale": scale,
        "log_marginal": state.log_marginal,
        "train_accuracy": training_accuracy(state),
        "encoder_train_accuracy": accuracy(encoder, train01.features, train01.labels),
    }

    def predict(points):
        return predict_proba_many(state, encode(encoder, points, 2))[:, 1]

    return predict, info, encoder


def run_mnist_interp(cfg: ExperimentConfig) -> UncertaintyReport:
    """Interpolation sweep: random 0/1 test pairs probed along t in [-1, 2]."""
    opt = merged_options(cfg)
    models = _ModelStore(opt.get("save_models"), opt.get("load_models"))
    train_full = _load_mnist_pair(opt, "train")
    test_full = _load_mnist_pair(opt, "test")
    train01 = filter_classes(train_full, {0, 1})
    test01 = filter_classes(test_full, {0, 1})
    t_grid = np.linspace(-1.0, 2.0, int(opt["t_steps"]))
    probes = probe_sweep(test01, int(opt["n_pairs"]), t_grid, derive_seed(cfg.seed, "probes"))
    points = np.stack([vec for _, _, vec in probes])

    predictors: dict = {}
    method_info: dict = {}
    for method in cfg.methods:
        log.info("mnist-interp: preparing %s", method)
        if method == "gp":
            predictors[method], method_info[method], _ = _build_gp_mnist(train01, cfg.seed, opt, models)
        elif method == "mcdropout":
            predictors[method], method_info[method], params = _build_mcdropout(
                train01, cfg.seed, opt, models
            )
            method_info[method]["test_accuracy"] = accuracy(params, test01.features, test01.labels)
        elif method == "mfvi":
            predictors[method], method_info[method], posterior = _build_mfvi(
                train01, cfg.seed, opt, models
            )
            method_info[method]["test_accuracy"] = accuracy(
                posterior.mean_params(), test01.features, test01.labels
            )
        elif method == "hmc":
            predictors[method], method_info[method], _ = _build_hmc(train01, cfg.seed, opt, models)

    p1 = _evaluate_methods(predictors, points)
    report = UncertaintyReport(metadata=_base_metadata(cfg, opt))
    report.metadata["method_info"] = method_info
    report.metadata["model_hashes"] = models.hashes
    mean_curves: dict = {}
    n_t = len(t_grid)
    for method in cfg.methods:
        ent = binary_entropy(p1[method])
        for j, (pair_id, t, _) in enumerate(probes):
            report.rows.append(
                ReportRow(
                    probe_id=f"pair{pair_id:03d}_t{j % n_t:02d}",
                    method=method,
                    descriptor=f"pair={pair_id};t={t:.9g}",
                    p_class1=float(p1[method][j]),
                    entropy_nats=float(ent[j]),
                )
            )
        curve = ent.reshape(-1, n_t).mean(axis=0)
        mean_curves[method] = {f"{t:.9g}": float(v) for t, v in zip(t_grid, curve)}
    report.metadata["mean_entropy_per_t"] = mean_curves
    report.metadata["t_grid"] = [float(t) for t in t_grid]
    report.validate()
    return report


def run_digit_table(cfg: ExperimentConfig) -> UncertaintyReport:
    """Per-digit mean MCDropout entropy over the full test set (0/1 training)."""
    opt = merged_options(cfg)
    models = _ModelStore(opt.get("save_models"), opt.get("load_models"))
    train_full = _load_mnist_pair(opt, "train")
    test_full = _load_mnist_pair(opt, "test")
    train01 = filter_classes(train_full, {0, 1})

    predict, info, _ = _build_mcdropout(train01, cfg.seed, opt, models)
    p1 = predict(test_full.features)
    ent = binary_entropy(p1)

    report = UncertaintyReport(metadata=_base_metadata(cfg, opt))
    report.metadata["methods"] = ["mcdropout"]
    report.metadata["method_info"] = {"mcdropout": info}
    report.metadata["model_hashes"] = models.hashes
    for i, label in enumerate(test_full.labels):
        report.rows.append(
            ReportRow(
                probe_id=f"digit{int(label)}_{i:05d}",
                method="mcdropout",
                descriptor=f"class={int(label)}",
                p_class1=float(p1[i]),
                entropy_nats=float(ent[i]),
            )
        )
    per_digit = {
        str(c): float(np.mean(ent[test_full.labels == c])) for c in test_full.classes
    }
    report.metadata["per_digit_mean_entropy"] = per_digit
    report.validate()
    return report


def run_theorem_check(cfg: ExperimentConfig) -> UncertaintyReport:
    """Numerically verify that |pi* - 1/2| collapses with the kernel similarity.

    Probes march along the (1,1) ray away from the toy training data; each
    probe records its sup-norm kernel similarity and the deviation from 1/2.
    Violations raise CheckFailure with the offending values (the built report
    rides along on the exception).
    """
    opt = merged_options(cfg)
    d = make_toy2d(int(opt["n_per_class"]), cfg.seed)
    params = KernelParams(float(opt["length_scale"]), float(opt["signal_variance"]))
    state = laplace_fit(d, params, link=str(opt["link"]))
    n = d.n_samples
    bound_c = float(np.max(np.abs(state.grad))) + 1.0

    unit = np.array([1.0, 1.0]) / np.sqrt(2.0)
    distances = [float(r) for r in opt["ray_distances"]]
    probes = [(f"ray_{r:05.1f}", r * unit) for r in distances]
    # a class-1 training point near its mode, for the in-distribution contrast
    idx1 = np.flatnonzero(d.labels == 1)
    center = np.array([2.0, 2.0])
    train_pt = d.features[idx1[np.argmin(np.sum((d.features[idx1] - center) ** 2, axis=1))]]
    probes.append(("train_point", train_pt))

    rows = []
    records = []
    for probe_id, x in probes:
        k_star = kernel_matrix(state.X, x[None, :], params)[:, 0]
        p1 = float(predict_proba_many(state, x[None, :])[0, 1])
        records.append(
            {
                "probe_id": probe_id,
                "x": [float(x[0]), float(x[1])],
                "kstar_inf": float(np.max(np.abs(k_star))),
                "min_train_distance": float(np.min(np.linalg.norm(state.X - x, axis=1))),
                "deviation": abs(p1 - 0.5),
                "p_class1": p1,
            }
        )
        rows.append(
            ReportRow(
                probe_id=probe_id,
                method="gp",
                descriptor=f"x={x[0]:.9g};y={x[1]:.9g}",
                p_class1=p1,
                entropy_nats=float(binary_entropy(p1)),
            )
        )

    report = UncertaintyReport(rows=rows, metadata=_base_metadata(cfg, opt))
    report.metadata["methods"] = ["gp"]
    report.metadata["theorem"] = {
        "bound_constant": bound_c,
        "n_train": n,
        "probes": records,
    }
    report.validate()

    ray = [r for r in records if r["probe_id"].startswith("ray_")]
    failures = []
    for eps in (1e-6, 1e-8, 1e-10):
        for r in ray:
            if r["kstar_inf"] < eps and r["deviation"] >= bound_c * eps * n:
                failures.append(("bound", eps, r["probe_id"], r["deviation"]))
    for r in ray:
        if r["kstar_inf"] < 1e-8:
            if r["deviation"] >= 1e-6:
                failures.append(("half", r["probe_id"], r["deviation"]))
            ent = binary_entropy(r["p_class1"])
            if abs(ent - LN2) >= 1e-6:
                failures.append(("entropy", r["probe_id"], float(ent)))
    deviations = [r["deviation"] for r in ray]
    for a, b in zip(deviations, deviations[1:]):
        if b > a + 1e-12:
            failures.append(("monotone", a, b))
    far = [r for r in ray if r["min_train_distance"] >= 10.0 * params.length_scale]
    if not far:
        failures.append(("coverage", "no probe at distance >= 10 length scales"))
    elif far[0]["deviation"] >= 1e-6:
        failures.append(("far_field", far[0]["probe_id"], far[0]["deviation"]))
    train_rec = records[-1]
    if train_rec["p_class1"] < 0.7:
        failures.append(("train_point", train_rec["p_class1"]))

    report.metadata["theorem"]["violations"] = [list(map(str, f)) for f in failures]
    if failures:
        raise CheckFailure(
            f"theorem check failed: {failures[0]}", detail=failures, report=report
        )
    return report


_RUNNERS = {
    "toy2d": run_toy2d,
    "mnist-interp": run_mnist_interp,
    "digit-table": run_digit_table,
    "theorem-check": run_theorem_check,
}


def run_experiment(cfg: ExperimentConfig) -> UncertaintyReport:
    return _RUNNERS[cfg.experiment](cfg)


def _fmt(value: float) -> str:
    return f"{float(value):.9g}"


def _quantize(value):
    """Round floats to 9 significant digits so JSON output is reproducible."""
    if isinstance(value, float):
        return float(_fmt(value))
    if isinstance(value, dict):
        return {k: _quantize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_quantize(v) for v in value]
    return value


def write_report(report: UncertaintyReport, path, fmt: str = "csv") -> None:
    """Serialize a report; identical reports produce byte-identical files."""
    report.validate()
    if fmt == "csv":
        lines = ["probe_id,method,descriptor,p_class1,entropy_nats"]
        for row in report.rows:
            for text in (row.probe_id, row.method, row.descriptor):
                if "," in text or '"' in text or "\n" in text:
                    raise ValueError(f"CSV field needs quoting, refusing: {text!r}")
            lines.append(
                f"{row.probe_id},{row.method},{row.descriptor},"
                f"{_fmt(row.p_class1)},{_fmt(row.entropy_nats)}"
            )
        payload = "\n".join(lines) + "\n"
    elif fmt == "json":
        doc = {
            "metadata": _quantize(report.metadata),
            "rows": [
                {
                    "probe_id": row.probe_id,
                    "method": row.method,
                    "descriptor": row.descriptor,
                    "p_class1": _quantize(row.p_class1),
                    "entropy_nats": _quantize(row.entropy_nats),
                }
                for row in report.rows
            ],
        }
        payload = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(payload)
