"""Training loop, prediction and end-to-end completion."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .matrix import ObservedMatrix, ScalingRecord, scale_to_range, split_holdout, unscale
from .network import init_branch
from .objective import (
    Hyperparameters,
    ModelState,
    column_reconstruction,
    row_reconstruction,
    total_loss,
)
from .optimizer import RpropConfig, init_rprop, rprop_step

_logger = logging.getLogger(__name__)

# observed data is mapped into these intervals before training
TARGET_RANGES = {
    "sigmoid": (0.1, 0.9),
    "tanh": (-0.85, 0.85),
    "relu": (0.1, 0.9),
}

PREDICTION_MODES = ("column", "row", "average")
DIVERGENCE_FACTOR = 1e6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EarlyStopping:
    """Validation split taken from the observed entries.

    ``patience=None`` only monitors the split (no stopping); ``restore_best``
    returns the state with the lowest validation error instead of the last one.
    """

    holdout_fraction: float = 0.05
    patience: Optional[int] = 50
    min_delta: float = 1e-5
    restore_best: bool = True


@dataclass(frozen=True)
class ModelConfig:
    """Architecture, loss weights and optimisation policy.

    ``col_layer_dims`` runs from ``rank`` to ``m`` and ``row_layer_dims`` from
    ``rank`` to ``n``; :meth:`for_shape` builds them from hidden widths.
    """

    rank: int
    col_layer_dims: Tuple[int, ...]
    row_layer_dims: Tuple[int, ...]
    activation: str = "sigmoid"
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    rprop: RpropConfig = field(default_factory=RpropConfig)
    max_iters: int = 1000
    early_stop: Optional[EarlyStopping] = None
    prediction_mode: str = "column"
    disable_linear_path: bool = False
    disable_nonlinear_path: bool = False
    clamp_observed: bool = False
    target_range: Optional[Tuple[float, float]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "col_layer_dims", tuple(int(d) for d in self.col_layer_dims))
        object.__setattr__(self, "row_layer_dims", tuple(int(d) for d in self.row_layer_dims))
        if self.rank < 1:
            raise ValueError("rank must be a positive integer")
        if self.col_layer_dims[0] != self.rank or self.row_layer_dims[0] != self.rank:
            raise ValueError("both branches must start at the rank")
        if self.activation not in TARGET_RANGES:
            raise ValueError(f"activation must be one of {sorted(TARGET_RANGES)}")
        if self.prediction_mode not in PREDICTION_MODES:
            raise ValueError(f"prediction_mode must be one of {PREDICTION_MODES}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.target_range is not None:
            lo, hi = map(float, self.target_range)
            if not hi > lo:
                raise ValueError("target_range must satisfy hi > lo")
            object.__setattr__(self, "target_range", (lo, hi))
        if self.disable_linear_path and self.disable_nonlinear_path:
            raise ValueError("cannot disable both the linear and the nonlinear path")

    @classmethod
    def for_shape(
        cls,
        shape,
        rank: int,
        col_hidden: Sequence[int] = (),
        row_hidden: Sequence[int] = (),
        **kwargs,
    ) -> "ModelConfig":
        m, n = shape
        return cls(
            rank=rank,
            col_layer_dims=(rank, *col_hidden, m),
            row_layer_dims=(rank, *row_hidden, n),
            **kwargs,
        )

    @property
    def scaled_range(self) -> Tuple[float, float]:
        if self.target_range is not None:
            return self.target_range
        return TARGET_RANGES[self.activation]

    @property
    def use_linear(self) -> bool:
        return not self.disable_linear_path

    @property
    def use_nonlinear(self) -> bool:
        return not self.disable_nonlinear_path

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    state: ModelState
    scaling: ScalingRecord
    train: ObservedMatrix  # scaled units
    validation: Optional[ObservedMatrix]
    loss_history: List[float]
    val_history: List[float]
    iterations_run: int
    best_iteration: int


@dataclass
class CompletionResult:
    completed: np.ndarray
    column_recon: np.ndarray
    row_recon: np.ndarray
    loss_history: List[float]
    val_history: List[float]
    iterations_run: int
    config: ModelConfig
    seed: int
    fit: FitResult = field(repr=False, default=None)


def check_config(Y: ObservedMatrix, cfg: ModelConfig) -> None:
    m, n = Y.shape
    if cfg.col_layer_dims[-1] != m or cfg.row_layer_dims[-1] != n:
        raise ValueError(
            f"branch outputs ({cfg.col_layer_dims[-1]}, {cfg.row_layer_dims[-1]}) "
            f"do not match data shape {(m, n)}"
        )
    if Y.n_observed == 0:
        raise ValueError("no observed entries")
    r = cfg.rank
    min_row = int(Y.indicator.sum(axis=1).min())
    min_col = int(Y.indicator.sum(axis=0).min())
    if r >= min(m, n) or r >= min_row or r >= min_col:
        warnings.warn(
            f"rank {r} is not below min(m, n) = {min(m, n)} and the fewest observed "
            f"entries per row/column ({min_row}/{min_col})",
            RuntimeWarning,
            stacklevel=3,
        )


def init_state(shape, cfg: ModelConfig) -> ModelState:
    m, n = shape
    rng = np.random.default_rng(cfg.seed)
    col_net = init_branch(cfg.col_layer_dims, cfg.activation, rng)
    row_net = init_branch(cfg.row_layer_dims, cfg.activation, rng)
    return ModelState(col_net, row_net, np.zeros((cfg.rank, n)), np.zeros((m, cfg.rank)))


def predict(state: ModelState, mode: str = "column", use_linear=True, use_nonlinear=True):
    """Reconstruction in scaled units from the column branch, row branch or both."""
    if mode == "column":
        return column_reconstruction(state, use_linear, use_nonlinear)
    if mode == "row":
        return row_reconstruction(state, use_linear, use_nonlinear)
    if mode == "average":
        return 0.5 * (
            column_reconstruction(state, use_linear, use_nonlinear)
            + row_reconstruction(state, use_linear, use_nonlinear)
        )
    raise ValueError(f"unknown prediction mode {mode!r}")


def masked_mse(pred, Y: ObservedMatrix) -> float:
    diff = Y.indicator * (pred - Y.values)
    return float(np.sum(diff * diff) / max(Y.n_observed, 1))


def fit(Y: ObservedMatrix, cfg: ModelConfig) -> FitResult:
    """Scale ``Y``, initialise, and run iRprop+ on the total objective."""
    check_config(Y, cfg)
    Ys, record = scale_to_range(Y, cfg.scaled_range)
    if cfg.early_stop is not None:
        train, val = split_holdout(Ys, cfg.early_stop.holdout_fraction, cfg.seed)
    else:
        train, val = Ys, None

    state = init_state(Y.shape, cfg)
    params = state.to_vector()
    opt = init_rprop(params, cfg.rprop)
    loss_history: List[float] = []
    val_history: List[float] = []
    best_state, best_val, best_iter, stale = state, np.inf, 0, 0

    for it in range(cfg.max_iters):
        loss, grads = total_loss(state, train, cfg.hp, cfg.use_linear, cfg.use_nonlinear)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {it}")
        if loss_history and loss > DIVERGENCE_FACTOR * loss_history[0]:
            raise TrainingError(f"training diverged at iteration {it} (loss {loss:.3g})")
        loss_history.append(loss)

        if val is not None:
            score = masked_mse(
                predict(state, cfg.prediction_mode, cfg.use_linear, cfg.use_nonlinear), val
            )
            val_history.append(score)
            if score < best_val - cfg.early_stop.min_delta:
                best_state, best_val, best_iter, stale = state, score, it, 0
            else:
                stale += 1
                if cfg.early_stop.patience is not None and stale >= cfg.early_stop.patience:
                    _logger.debug("early stop at iteration %d (best %d)", it, best_iter)
                    break

        params, opt = rprop_step(opt, params, grads.to_vector(), loss, cfg.rprop)
        state = state.with_vector(params)

    iterations = len(loss_history)
    if val is None or not cfg.early_stop.restore_best:
        best_state, best_iter = state, iterations
    return FitResult(best_state, record, train, val, loss_history, val_history, iterations, best_iter)


def complete(Y: ObservedMatrix, cfg: ModelConfig) -> CompletionResult:
    """Fit, predict, map back to original units and optionally clamp observed entries."""
    res = fit(Y, cfg)
    col = unscale(predict(res.state, "column", cfg.use_linear, cfg.use_nonlinear), res.scaling)
    row = unscale(predict(res.state, "row", cfg.use_linear, cfg.use_nonlinear), res.scaling)
    completed = {"column": col, "row": row, "average": 0.5 * (col + row)}[cfg.prediction_mode]
    if cfg.clamp_observed:
        completed = np.where(Y.mask, Y.values, completed)
    return CompletionResult(
        completed=completed,
        column_recon=col,
        row_recon=row,
        loss_history=res.loss_history,
        val_history=res.val_history,
        iterations_run=res.iterations_run,
        config=cfg,
        seed=cfg.seed,
        fit=res,
    )


def write_history(path, loss_history, val_history=()) -> None:
    """CSV with header ``iteration,total_loss,holdout_metric``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "total_loss", "holdout_metric"])
        for i, loss in enumerate(loss_history):
            metric = repr(val_history[i]) if i < len(val_history) else ""
            w.writerow([i, repr(loss), metric])
