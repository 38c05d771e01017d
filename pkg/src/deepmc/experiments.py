"""Benchmark sweeps: synthetic mask sweep, regulariser grid, report files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data_io import SyntheticSpec, gen_synthetic
from .evaluation import als_complete, evaluate, nmae
from .matrix import MaskSpec, ObservedMatrix, apply_mask
from .objective import Hyperparameters
from .optimizer import RpropConfig
from .trainer import EarlyStopping, ModelConfig, complete, masked_mse, predict

METHODS = ("full", "nonlinear-only", "linear-only", "als")

BENCH_HEADER = (
    "mask_kind", "mask_fraction", "method", "seed", "psnr", "ssim", "nmae", "evaluated_on",
)
ABLATE_HEADER = (
    "gamma", "lambda", "seed", "holdout_nmae", "train_mse", "validation_mse", "gap",
)


@dataclass(frozen=True)
class BenchSettings:
    """Model and data settings shared by every run of a sweep."""

    m: int = 100
    n: int = 200
    rank: int = 10
    col_hidden: Tuple[int, ...] = (20, 40)
    row_hidden: Tuple[int, ...] = (25, 50)
    activation: str = "tanh"
    hp: Hyperparameters = field(default_factory=lambda: Hyperparameters(1, 1, 0.01, 0.01))
    rprop: RpropConfig = field(default_factory=RpropConfig)
    max_iters: int = 1000
    early_stop: Optional[EarlyStopping] = None
    prediction_mode: str = "column"
    target_range: Optional[Tuple[float, float]] = None
    als_iters: int = 50
    als_ridge: float = 1e-3

    def model_config(self, shape, seed: int, method: str = "full", **overrides) -> ModelConfig:
        kw = dict(
            activation=self.activation,
            hp=self.hp,
            rprop=self.rprop,
            max_iters=self.max_iters,
            early_stop=self.early_stop,
            prediction_mode=self.prediction_mode,
            target_range=self.target_range,
            seed=seed,
        )
        if method == "nonlinear-only":
            # bounded output: the data has to sit inside the activation range
            kw.update(disable_linear_path=True, target_range=None)
        elif method == "linear-only":
            kw.update(disable_nonlinear_path=True)
        elif method != "full":
            raise ValueError(f"not a network method: {method!r}")
        kw.update(overrides)
        return ModelConfig.for_shape(shape, self.rank, self.col_hidden, self.row_hidden, **kw)


def synthetic_instance(settings: BenchSettings, fraction: float, seed: int):
    """Eq.-17-style matrix for ``seed`` and its randomly masked observation."""
    truth = gen_synthetic(SyntheticSpec(settings.m, settings.n, settings.rank, seed))
    observed = apply_mask(truth, MaskSpec("random", fraction=fraction, seed=seed))
    return truth, observed


def run_method(method: str, Y: ObservedMatrix, settings: BenchSettings, seed: int) -> np.ndarray:
    if method == "als":
        return als_complete(Y, settings.rank, settings.als_iters, settings.als_ridge, seed)
    return complete(Y, settings.model_config(Y.shape, seed, method)).completed


def synth_bench(
    fractions: Sequence[float],
    seeds: Iterable[int],
    settings: BenchSettings = BenchSettings(),
    methods: Sequence[str] = METHODS,
) -> List[Dict]:
    """One row per (mask fraction, method, seed) with hidden-entry metrics."""
    rows = []
    for fraction in fractions:
        for seed in seeds:
            truth, Y = synthetic_instance(settings, fraction, seed)
            hidden = ~Y.mask
            bounds = (float(truth.min()), float(truth.max()))
            for method in methods:
                pred = run_method(method, Y, settings, seed)
                rep = evaluate(truth, pred, hidden, bounds)
                rows.append(
                    dict(
                        mask_kind="random",
                        mask_fraction=fraction,
                        method=method,
                        seed=seed,
                        psnr=rep.psnr,
                        ssim=rep.ssim,
                        nmae=rep.nmae,
                        evaluated_on=rep.evaluated_on,
                    )
                )
    rows.sort(key=lambda r: (r["mask_fraction"], r["method"], r["seed"]))
    return rows


def summarize(rows: Sequence[Dict], keys=("mask_fraction", "method"), value="psnr") -> Dict:
    """Mean of ``value`` over seeds, grouped by ``keys``."""
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def generalization_run(Y: ObservedMatrix, truth, cfg: ModelConfig) -> Dict:
    """Fit with a monitored validation split; report hidden NMAE and the train/validation gap.

    ``cfg.early_stop`` must be set; the split it defines is excluded from training.
    Errors are mean squared column-branch residuals in scaled units.
    """
    if cfg.early_stop is None:
        raise ValueError("generalization_run needs a validation split (cfg.early_stop)")
    res = complete(Y, cfg)
    fit = res.fit
    recon = predict(fit.state, "column", cfg.use_linear, cfg.use_nonlinear)
    train_mse = masked_mse(recon, fit.train)
    val_mse = masked_mse(recon, fit.validation)
    bounds = (float(np.min(truth)), float(np.max(truth)))
    return dict(
        holdout_nmae=nmae(truth, res.completed, ~Y.mask, bounds),
        train_mse=train_mse,
        validation_mse=val_mse,
        gap=val_mse - train_mse,
    )


def regularizer_grid(
    grid: Sequence[Tuple[float, float]],
    seeds: Iterable[int],
    settings: BenchSettings = BenchSettings(),
    fraction: float = 0.7,
    validation_fraction: float = 0.05,
) -> List[Dict]:
    """Train/validation behaviour for each ``(gamma, lambda)`` pair at fixed alpha, beta."""
    rows = []
    monitor = EarlyStopping(validation_fraction, patience=None, restore_best=False)
    for seed in seeds:
        truth, Y = synthetic_instance(settings, fraction, seed)
        for gamma, lam in grid:
            hp = Hyperparameters(settings.hp.alpha, settings.hp.beta, gamma, lam)
            cfg = settings.model_config(Y.shape, seed, hp=hp, early_stop=monitor)
            rows.append(dict(gamma=gamma, **{"lambda": lam}, seed=seed, **generalization_run(Y, truth, cfg)))
    rows.sort(key=lambda r: (r["gamma"], r["lambda"], r["seed"]))
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def write_rows(rows: Sequence[Dict], path, header: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r[h]) for h in header])
