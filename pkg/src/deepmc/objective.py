"""Loss terms of the two-branch model and their gradients.

The total objective is::

    alpha * L_column + beta * L_row + gamma * L_manifold + lambda * L_decay

with

* ``L_column = 1/(2n) ||I * (Y - f_c(V))||^2`` where ``f_c`` is the column
  branch reconstruction (nonlinear + linear path) applied to ``V`` (``r x n``);
* ``L_row = 1/(2m) ||I^T * (Y^T - f_r(U^T))||^2`` for the row branch on ``U``;
* ``L_manifold = 1/(2n) ||I * (Y - P_c P_r^T)||^2`` with ``P_c``, ``P_r`` the
  products of each branch's weights;
* ``L_decay = 1/(2n)||V||^2 + 1/(2m)||U||^2 + 1/2 sum ||W||^2`` (no biases).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .matrix import ObservedMatrix
from .network import (
    BranchNetwork,
    NetworkError,
    backward_dual,
    forward_dual,
    manifold_gradients,
    weight_product,
)


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.01
    lam: float = 0.01

    def __post_init__(self):
        coeffs = (self.alpha, self.beta, self.gamma, self.lam)
        if min(coeffs) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {coeffs}")
        if max(coeffs) == 0:
            raise ValueError("at least one loss weight must be positive")

    def scaled(self, c: float) -> "Hyperparameters":
        return Hyperparameters(c * self.alpha, c * self.beta, c * self.gamma, c * self.lam)


@dataclass
class ModelState:
    """Everything the optimiser moves: both branches and their latent inputs."""

    col_net: BranchNetwork
    row_net: BranchNetwork
    V: np.ndarray  # r x n, column latent inputs
    U: np.ndarray  # m x r, row latent inputs

    def __post_init__(self):
        r = self.col_net.input_dim
        if self.row_net.input_dim != r:
            raise NetworkError("both branches must take the same rank r as input")
        m, n = self.col_net.output_dim, self.row_net.output_dim
        if self.V.shape != (r, n) or self.U.shape != (m, r):
            raise NetworkError(
                f"latent inputs have shapes V{self.V.shape}, U{self.U.shape}; "
                f"expected V{(r, n)}, U{(m, r)}"
            )

    @property
    def shape(self):
        return self.col_net.output_dim, self.row_net.output_dim

    @property
    def rank(self) -> int:
        return self.col_net.input_dim

    def arrays(self) -> List[np.ndarray]:
        """Trainables in a fixed order (shared with :class:`GradientBundle`)."""
        return (
            list(self.col_net.weights)
            + list(self.col_net.biases)
            + list(self.row_net.weights)
            + list(self.row_net.biases)
            + [self.V, self.U]
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec) -> "ModelState":
        """New state with trainables read from a flat vector."""
        out = self.copy()
        pos = 0
        for a in out.arrays():
            a[...] = np.reshape(vec[pos : pos + a.size], a.shape)
            pos += a.size
        if pos != len(vec):
            raise ValueError(f"vector has {len(vec)} entries, state needs {pos}")
        return out

    def copy(self) -> "ModelState":
        return ModelState(self.col_net.copy(), self.row_net.copy(), self.V.copy(), self.U.copy())


@dataclass
class GradientBundle:
    col_weights: List[np.ndarray]
    col_biases: List[np.ndarray]
    row_weights: List[np.ndarray]
    row_biases: List[np.ndarray]
    V: np.ndarray
    U: np.ndarray

    @classmethod
    def zeros_like(cls, state: ModelState) -> "GradientBundle":
        return cls(
            [np.zeros_like(W) for W in state.col_net.weights],
            [np.zeros_like(b) for b in state.col_net.biases],
            [np.zeros_like(W) for W in state.row_net.weights],
            [np.zeros_like(b) for b in state.row_net.biases],
            np.zeros_like(state.V),
            np.zeros_like(state.U),
        )

    def arrays(self) -> List[np.ndarray]:
        return (
            self.col_weights + self.col_biases + self.row_weights + self.row_biases + [self.V, self.U]
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def add_(self, other: "GradientBundle", coeff: float = 1.0) -> "GradientBundle":
        for mine, theirs in zip(self.arrays(), other.arrays()):
            mine += coeff * theirs
        return self


def _check(state: ModelState, Y: ObservedMatrix):
    if Y.shape != state.shape:
        raise ValueError(f"data shape {Y.shape} does not match model shape {state.shape}")


def column_reconstruction(state: ModelState, use_linear=True, use_nonlinear=True):
    nl, li, _ = forward_dual(state.col_net, state.V, use_linear, use_nonlinear)
    return nl + li


def row_reconstruction(state: ModelState, use_linear=True, use_nonlinear=True):
    """Row-branch reconstruction, returned in ``m x n`` orientation."""
    nl, li, _ = forward_dual(state.row_net, state.U.T, use_linear, use_nonlinear)
    return (nl + li).T


def loss_column(state: ModelState, Y: ObservedMatrix, use_linear=True, use_nonlinear=True):
    _check(state, Y)
    n = Y.shape[1]
    nl, li, cache = forward_dual(state.col_net, state.V, use_linear, use_nonlinear)
    resid = Y.indicator * (nl + li - Y.values)
    value = 0.5 / n * float(np.sum(resid * resid))
    dW, db, dV = backward_dual(state.col_net, cache, resid / n)
    grads = GradientBundle.zeros_like(state)
    grads.col_weights, grads.col_biases, grads.V = dW, db, dV
    return value, grads


def loss_row(state: ModelState, Y: ObservedMatrix, use_linear=True, use_nonlinear=True):
    _check(state, Y)
    m = Y.shape[0]
    nl, li, cache = forward_dual(state.row_net, state.U.T, use_linear, use_nonlinear)
    resid = Y.indicator.T * (nl + li - Y.values.T)
    value = 0.5 / m * float(np.sum(resid * resid))
    dW, db, dUt = backward_dual(state.row_net, cache, resid / m)
    grads = GradientBundle.zeros_like(state)
    grads.row_weights, grads.row_biases, grads.U = dW, db, dUt.T
    return value, grads


def loss_manifold(state: ModelState, Y: ObservedMatrix):
    _check(state, Y)
    n = Y.shape[1]
    P_c = weight_product(state.col_net)
    P_r = weight_product(state.row_net)
    resid = Y.indicator * (P_c @ P_r.T - Y.values)
    value = 0.5 / n * float(np.sum(resid * resid))
    d_col, d_row = manifold_gradients(state.col_net, state.row_net, resid / n)
    grads = GradientBundle.zeros_like(state)
    grads.col_weights, grads.row_weights = d_col, d_row
    return value, grads


def loss_decay(state: ModelState):
    m, n = state.shape
    value = 0.5 / n * float(np.sum(state.V**2)) + 0.5 / m * float(np.sum(state.U**2))
    value += 0.5 * sum(float(np.sum(W**2)) for W in state.col_net.weights)
    value += 0.5 * sum(float(np.sum(W**2)) for W in state.row_net.weights)
    grads = GradientBundle.zeros_like(state)
    grads.V = state.V / n
    grads.U = state.U / m
    grads.col_weights = [W.copy() for W in state.col_net.weights]
    grads.row_weights = [W.copy() for W in state.row_net.weights]
    return value, grads


def total_loss(
    state: ModelState,
    Y: ObservedMatrix,
    hp: Hyperparameters,
    use_linear: bool = True,
    use_nonlinear: bool = True,
):
    """Weighted objective and its full :class:`GradientBundle`.

    Terms whose weight is zero are not evaluated at all.
    """
    _check(state, Y)
    total = 0.0
    grads = GradientBundle.zeros_like(state)
    terms = (
        (hp.alpha, lambda: loss_column(state, Y, use_linear, use_nonlinear)),
        (hp.beta, lambda: loss_row(state, Y, use_linear, use_nonlinear)),
        (hp.gamma, lambda: loss_manifold(state, Y)),
        (hp.lam, lambda: loss_decay(state)),
    )
    for coeff, term in terms:
        if coeff == 0:
            continue
        value, g = term()
        total += coeff * value
        grads.add_(g, coeff)
    return total, grads
