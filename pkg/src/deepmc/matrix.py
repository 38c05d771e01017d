"""Masked dense matrices, mask generation, range scaling and holdout splits.

Missing entries are stored as ``0`` next to a separate 0/1 indicator grid, so a
genuinely observed zero is never confused with a hole.

All randomness goes through :func:`numpy.random.default_rng`, i.e. the PCG64
bit generator seeded with the given unsigned integer. PCG64 output is
specified bit-for-bit, which keeps masks and splits identical across platforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np


class MatrixError(ValueError):
    """Raised on malformed matrices, masks or scaling requests."""


@dataclass(frozen=True)
class ScalingRecord:
    """Affine map ``x_scaled = (x - offset) / gain`` and its inverse."""

    offset: float
    gain: float
    original_min: float
    original_max: float
    degenerate: bool = False

    def __post_init__(self):
        if self.gain == 0:
            raise MatrixError("gain must be nonzero")

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.gain

    def invert(self, x):
        return np.asarray(x, dtype=float) * self.gain + self.offset


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Value grid plus observation indicator (1 = observed)."""

    values: np.ndarray
    indicator: np.ndarray
    scaling: Optional[ScalingRecord] = field(default=None)

    def __post_init__(self):
        for arr in (self.values, self.indicator):
            arr.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.indicator.sum())

    @property
    def mask(self) -> np.ndarray:
        """Boolean view of the indicator."""
        return self.indicator.astype(bool)

    def observed_values(self) -> np.ndarray:
        return self.values[self.mask]


def build_observed(values, indicator, scaling=None) -> ObservedMatrix:
    """Build an :class:`ObservedMatrix`, zeroing unobserved positions.

    >>> build_observed([[1, 2], [3, 4]], [[1, 0], [1, 1]]).values.tolist()
    [[1.0, 0.0], [3.0, 4.0]]
    """
    values = np.array(values, dtype=float)
    indicator = np.array(indicator)
    if values.ndim != 2:
        raise MatrixError(f"values must be 2-D, got shape {values.shape}")
    if values.shape != indicator.shape:
        raise MatrixError(
            f"shape mismatch: values {values.shape} vs indicator {indicator.shape}"
        )
    if values.shape[0] < 1 or values.shape[1] < 1:
        raise MatrixError("matrix must have at least one row and one column")
    if not np.isin(indicator, (0, 1)).all():
        raise MatrixError("indicator entries must be exactly 0 or 1")
    indicator = indicator.astype(np.int8)
    values = np.where(indicator == 1, values, 0.0)
    return ObservedMatrix(values, indicator, scaling)


@dataclass(frozen=True)
class MaskSpec:
    """How to hide entries.

    ``kind`` is ``"random"`` (uses ``fraction``), ``"block"`` (uses
    ``top, left, height, width``) or ``"image"`` (uses ``path``; nonzero pixels
    are hidden).
    """

    kind: str
    fraction: float = 0.0
    top: int = 0
    left: int = 0
    height: int = 0
    width: int = 0
    path: Optional[Union[str, Path]] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "block", "image"):
            raise MatrixError(f"unknown mask kind {self.kind!r}")
        if self.kind == "random" and not 0.0 <= self.fraction <= 1.0:
            raise MatrixError(f"mask fraction must be in [0, 1], got {self.fraction}")
        if self.kind == "image" and self.path is None:
            raise MatrixError("image mask needs a path")
        if self.seed < 0:
            raise MatrixError("seed must be an unsigned integer")


def generate_mask(shape, spec: MaskSpec) -> np.ndarray:
    """Return the indicator (1 = kept/observed) for ``shape`` under ``spec``."""
    m, n = shape
    indicator = np.ones((m, n), dtype=np.int8)
    if spec.kind == "random":
        n_hide = int(round(spec.fraction * m * n))
        rng = np.random.default_rng(spec.seed)
        hidden = rng.choice(m * n, size=n_hide, replace=False)
        indicator.reshape(-1)[hidden] = 0
    elif spec.kind == "block":
        if (
            spec.top < 0
            or spec.left < 0
            or spec.height < 0
            or spec.width < 0
            or spec.top + spec.height > m
            or spec.left + spec.width > n
        ):
            raise MatrixError(
                f"block ({spec.top},{spec.left},{spec.height},{spec.width}) "
                f"lies outside a {m}x{n} matrix"
            )
        indicator[spec.top : spec.top + spec.height, spec.left : spec.left + spec.width] = 0
    else:
        from .data_io import load_image

        img = load_image(spec.path)
        if img.ndim == 3:
            img = img.max(axis=2)
        if img.shape != (m, n):
            raise MatrixError(f"mask image shape {img.shape} does not match {(m, n)}")
        indicator[img != 0] = 0
    return indicator


def apply_mask(complete, spec: MaskSpec) -> ObservedMatrix:
    """Hide entries of a fully known grid according to ``spec``."""
    complete = np.asarray(complete, dtype=float)
    return build_observed(complete, generate_mask(complete.shape, spec))


def scale_to_range(x: ObservedMatrix, target=(0.1, 0.9)):
    """Affinely map observed entries so that min -> lo and max -> hi.

    Returns ``(scaled, record)``. Constant observed data cannot be stretched;
    it is mapped to the midpoint with unit gain and a warning.
    """
    lo, hi = map(float, target)
    if not hi > lo:
        raise MatrixError(f"target range must satisfy hi > lo, got {target}")
    obs = x.observed_values()
    if obs.size == 0:
        raise MatrixError("cannot scale a matrix with no observed entries")
    vmin, vmax = float(obs.min()), float(obs.max())
    if vmax == vmin:
        warnings.warn(
            "observed values are constant; mapping them to the target midpoint",
            RuntimeWarning,
            stacklevel=2,
        )
        record = ScalingRecord(vmin - 0.5 * (lo + hi), 1.0, vmin, vmax, degenerate=True)
    else:
        gain = (vmax - vmin) / (hi - lo)
        record = ScalingRecord(vmin - lo * gain, gain, vmin, vmax)
    scaled = np.where(x.mask, record.apply(x.values), 0.0)
    return ObservedMatrix(scaled, x.indicator.copy(), record), record


def unscale(x, record: ScalingRecord) -> np.ndarray:
    """Inverse of :func:`scale_to_range` applied elementwise to a grid."""
    return record.invert(x)


def split_holdout(x: ObservedMatrix, fraction: float, seed: int, max_redraws: int = 100):
    """Partition the observed entries into ``(train, holdout)``.

    The holdout receives ``round(fraction * |observed|)`` entries drawn uniformly.
    Draws are repeated (up to ``max_redraws`` times) until every row and column of
    the training part keeps at least one observed entry, if the original has one.
    """
    if not 0.0 < fraction < 1.0:
        raise MatrixError(f"holdout fraction must be in (0, 1), got {fraction}")
    rows, cols = np.nonzero(x.indicator)
    n_obs = rows.size
    n_hold = int(round(fraction * n_obs))
    rng = np.random.default_rng(seed)
    need_rows = x.indicator.any(axis=1)
    need_cols = x.indicator.any(axis=0)

    for _ in range(max_redraws):
        pick = rng.choice(n_obs, size=n_hold, replace=False)
        hold = np.zeros(x.shape, dtype=np.int8)
        hold[rows[pick], cols[pick]] = 1
        train = x.indicator - hold
        if (train.any(axis=1) >= need_rows).all() and (train.any(axis=0) >= need_cols).all():
            break
    else:
        warnings.warn(
            "could not keep every row and column observed in the training split",
            RuntimeWarning,
            stacklevel=2,
        )
    return (
        ObservedMatrix(np.where(train == 1, x.values, 0.0), train, x.scaling),
        ObservedMatrix(np.where(hold == 1, x.values, 0.0), hold, x.scaling),
    )
