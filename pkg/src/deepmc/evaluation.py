"""Reconstruction metrics and a linear alternating-least-squares baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matrix import ObservedMatrix


@dataclass(frozen=True)
class MetricReport:
    psnr: float  # math.inf for an exact reconstruction
    ssim: float
    nmae: float
    evaluated_on: str = "hidden-only"

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr)


def _pair(y_true, y_hat):
    y_true = np.asarray(y_true, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y_true.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_hat.shape}")
    return y_true, y_hat


def psnr(y_true, y_hat) -> float:
    """``10 log10(N max(y_true)^2 / ||y_hat - y_true||^2)`` over the ``N`` entries.

    Uses the data maximum, not a nominal peak such as 255. Returns ``inf`` when
    the inputs are identical.
    """
    y_true, y_hat = _pair(y_true, y_hat)
    err = float(np.sum((y_hat - y_true) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(y_true.size * float(y_true.max()) ** 2 / err)


def ssim(y_true, y_hat, k1: float = 0.01, k2: float = 0.03) -> float:
    """Global SSIM over all entries (one window spanning the whole matrix).

    The stabilising constants are ``(k * D)^2`` where ``D`` is the dynamic
    range ``max(y_true) - min(y_true)``.
    """
    y_true, y_hat = _pair(y_true, y_hat)
    D = float(y_true.max() - y_true.min())
    c1, c2 = (k1 * D) ** 2, (k2 * D) ** 2
    mu_t, mu_h = y_true.mean(), y_hat.mean()
    var_t, var_h = y_true.var(), y_hat.var()
    cov = float(np.mean((y_true - mu_t) * (y_hat - mu_h)))
    num = (2 * mu_h * mu_t + c1) * (2 * cov + c2)
    den = (mu_h**2 + mu_t**2 + c1) * (var_h + var_t + c2)
    if den == 0.0:
        # constant, identical signals with zero range
        return 1.0
    return float(num / den)


def nmae(y_true, y_hat, hidden_mask, bounds) -> float:
    """Mean absolute error on hidden entries divided by the rating range."""
    y_true, y_hat = _pair(y_true, y_hat)
    hidden = np.asarray(hidden_mask).astype(bool)
    if hidden.shape != y_true.shape:
        raise ValueError("hidden_mask shape does not match the data")
    count = int(hidden.sum())
    if count == 0:
        raise ValueError("no hidden entries to evaluate")
    lo, hi = map(float, bounds)
    if not hi > lo:
        raise ValueError(f"degenerate bounds {bounds}")
    return float(np.abs(y_hat[hidden] - y_true[hidden]).sum() / ((hi - lo) * count))


def evaluate(y_true, y_hat, hidden_mask=None, bounds=None) -> MetricReport:
    """PSNR/SSIM/NMAE on the hidden entries (or on everything if no mask)."""
    y_true, y_hat = _pair(y_true, y_hat)
    if hidden_mask is None:
        hidden = np.ones(y_true.shape, dtype=bool)
        where = "full"
    else:
        hidden = np.asarray(hidden_mask).astype(bool)
        where = "hidden-only"
    if bounds is None:
        bounds = (float(y_true.min()), float(y_true.max()))
    return MetricReport(
        psnr=psnr(y_true[hidden], y_hat[hidden]),
        ssim=ssim(y_true[hidden], y_hat[hidden]),
        nmae=nmae(y_true, y_hat, hidden, bounds),
        evaluated_on=where,
    )


def _solve_side(Y, I, fixed, ridge):
    """Ridge solve of each row of ``Y ~ X @ fixed.T`` over observed entries."""
    r = fixed.shape[1]
    out = np.zeros((Y.shape[0], r))
    eye = ridge * np.eye(r)
    for i in range(Y.shape[0]):
        obs = I[i]
        F = fixed[obs]
        A = F.T @ F + eye
        if not obs.any() and ridge == 0:
            raise np.linalg.LinAlgError(f"row {i} has no observations and ridge is 0")
        try:
            out[i] = np.linalg.solve(A, F.T @ Y[i, obs])
        except np.linalg.LinAlgError:
            # under-determined subproblem: minimum-norm least squares
            out[i] = np.linalg.lstsq(A, F.T @ Y[i, obs], rcond=None)[0]
    return out


def als_objective(Y: ObservedMatrix, U, V, ridge) -> float:
    resid = Y.indicator * (U @ V - Y.values)
    return 0.5 * float(np.sum(resid**2)) + 0.5 * ridge * float(np.sum(U**2) + np.sum(V**2))


def als_factors(Y: ObservedMatrix, rank: int, iters: int = 100, ridge: float = 1e-3, seed: int = 0,
                tol: float = 0.0, history=None):
    """Alternating ridge least squares for ``Y ~ U V`` over observed entries.

    ``V`` starts from the seeded symmetric-uniform law used for network weights.
    Returns ``(U, V)``; if ``history`` is a list, the objective after each sweep
    is appended to it.
    """
    m, n = Y.shape
    if not 0 < rank < min(m, n):
        raise ValueError(f"rank must be in [1, min(m, n)), got {rank}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    I = Y.mask
    rng = np.random.default_rng(seed)
    s = np.sqrt(6.0 / (rank + n))
    V = rng.uniform(-s, s, size=(rank, n))
    U = np.zeros((m, rank))
    prev = np.inf
    for _ in range(iters):
        U = _solve_side(Y.values, I, V.T, ridge)
        V = _solve_side(Y.values.T, I.T, U, ridge).T
        obj = als_objective(Y, U, V, ridge)
        if history is not None:
            history.append(obj)
        if prev - obj <= tol * max(prev, 1.0) and tol > 0:
            break
        prev = obj
    return U, V


def als_complete(Y: ObservedMatrix, rank: int, iters: int = 100, ridge: float = 1e-3, seed: int = 0):
    """Completed ``m x n`` grid from :func:`als_factors`."""
    U, V = als_factors(Y, rank, iters, ridge, seed)
    return U @ V
