"""Synthetic data, dense CSV, rating triplets and PGM/PPM images."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .matrix import ObservedMatrix, build_observed


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    m: int = 100
    n: int = 200
    r: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n, self.r) < 1:
            raise ValueError("m, n and r must be positive")
        if not self.r < min(self.m, self.n):
            raise ValueError("r must be smaller than min(m, n)")


def scaled_tanh(x):
    """``1.7159 tanh(2x/3)``, elementwise."""
    return 1.7159 * np.tanh(2.0 / 3.0 * x)


def synthetic_from_factors(A, B):
    """``g(1.2 (0.5 g(AB)^2 - g(AB) - 1)) + AB`` with ``g`` = :func:`scaled_tanh`."""
    X = np.asarray(A, dtype=float) @ np.asarray(B, dtype=float)
    gx = scaled_tanh(X)
    return scaled_tanh(1.2 * (0.5 * gx**2 - gx - 1.0)) + X


def synthetic_factors(spec: SyntheticSpec):
    """Standard-normal ``A`` (m x r) and ``B`` (r x n) from PCG64 + ziggurat."""
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.m, spec.r))
    B = rng.standard_normal((spec.r, spec.n))
    return A, B


def gen_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """Fully known rank-``r``-driven nonlinear benchmark matrix."""
    return synthetic_from_factors(*synthetic_factors(spec))


# -- dense CSV ---------------------------------------------------------------


def load_dense_csv(path) -> np.ndarray:
    rows: List[List[float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if rows and len(vals) != len(rows[0]):
                raise FormatError(
                    f"{path}:{lineno}: ragged row with {len(vals)} cells, expected {len(rows[0])}"
                )
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    return np.array(rows, dtype=float)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dense_csv(grid, path) -> None:
    """One row per line, shortest round-trip representation of each value."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in grid:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# -- rating triplets -----------------------------------------------------------


@dataclass
class RatingsTable:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    bounds: Tuple[float, float]
    shape: Tuple[int, int]
    duplicates: int = 0


def load_ratings(path, delimiter: str = "\t", bounds=(1.0, 5.0), shape=None):
    """Parse ``user item rating [extra...]`` lines with 1-based ids.

    Returns ``(ObservedMatrix, RatingsTable)``. Later duplicates overwrite
    earlier ones and are counted in ``RatingsTable.duplicates``.
    """
    lo, hi = map(float, bounds)
    users, items, vals = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter) if delimiter != " " else line.split()
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: expected user, item, rating")
            try:
                u, i, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed line {line!r}") from None
            if u < 1 or i < 1:
                raise FormatError(f"{path}:{lineno}: ids are 1-based, got ({u}, {i})")
            if not lo <= v <= hi:
                raise FormatError(f"{path}:{lineno}: rating {v} outside bounds {bounds}")
            users.append(u - 1)
            items.append(i - 1)
            vals.append(v)
    if not vals:
        raise FormatError(f"{path}: no ratings found")
    rows, cols, values = np.array(users), np.array(items), np.array(vals)
    m, n = shape if shape is not None else (rows.max() + 1, cols.max() + 1)
    grid = np.zeros((m, n))
    ind = np.zeros((m, n), dtype=np.int8)
    seen = np.zeros((m, n), dtype=bool)
    dupes = 0
    for r, c, v in zip(rows, cols, values):
        dupes += seen[r, c]
        seen[r, c] = True
        grid[r, c] = v
        ind[r, c] = 1
    if dupes:
        warnings.warn(f"{path}: {dupes} duplicate ratings, last one kept", RuntimeWarning)
    table = RatingsTable(rows, cols, values, (lo, hi), (int(m), int(n)), int(dupes))
    return build_observed(grid, ind), table


# -- PGM / PPM -------------------------------------------------------------------


def _read_header(data: bytes, path):
    """Parse a binary netpbm header; returns (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    magic = tokens[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise FormatError(f"{path}: unsupported magic number {magic!r} (need P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    return magic, width, height, maxval, pos + 1


def load_image(path) -> np.ndarray:
    """``m x n`` float grid for P5, ``m x n x 3`` for P6, values in [0, 255]."""
    data = Path(path).read_bytes()
    magic, width, height, _, offset = _read_header(data, path)
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    raw = data[offset : offset + need]
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} pixel bytes at byte {offset}, got {len(raw)}")
    img = np.frombuffer(raw, dtype=np.uint8).astype(float)
    if channels == 1:
        return img.reshape(height, width)
    return img.reshape(height, width, 3)


def save_image(img, path) -> None:
    img = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        magic, (h, w) = b"P5", img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic, (h, w, _) = b"P6", img.shape
    else:
        raise FormatError(f"cannot write image of shape {img.shape}")
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + img.tobytes())


def unfold_rgb(img) -> np.ndarray:
    """``m x n x 3`` -> ``m x 3n`` laid out as ``[R | G | B]``."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"expected an m x n x 3 image, got {img.shape}")
    return np.concatenate([img[:, :, c] for c in range(3)], axis=1)


def refold_rgb(grid) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[1] % 3:
        raise FormatError(f"width {grid.shape} is not a multiple of 3")
    n = grid.shape[1] // 3
    return np.stack([grid[:, c * n : (c + 1) * n] for c in range(3)], axis=2)


def stack_images(paths: Iterable) -> np.ndarray:
    """Stack equal-size grayscale images as columns of a ``pixels x count`` matrix."""
    cols = []
    shape = None
    for p in sorted(map(str, paths)):
        img = load_image(p)
        if img.ndim != 2:
            raise FormatError(f"{p}: group stacking needs grayscale images")
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise FormatError(f"{p}: size {img.shape} differs from {shape}")
        cols.append(img.ravel())
    if not cols:
        raise FormatError("no images to stack")
    return np.stack(cols, axis=1)
