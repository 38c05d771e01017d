"""One branch of the two-branch completion network.

A branch is a stack of affine layers evaluated twice through the same weights:
once with an elementwise activation after every layer (the nonlinear path) and
once without any activation (the linear path). The reconstruction of a branch
is the sum of both outputs. Layer ``l`` maps ``d_l`` inputs to ``d_{l+1}``
outputs; ``weights[-1]`` is the output layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np


class NetworkError(ValueError):
    pass


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


def _tanh_grad(z, a):
    return 1.0 - a * a


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _identity(z):
    return z.copy()


def _identity_grad(z, a):
    return np.ones_like(z)


# name -> (activation, derivative given (pre-activation, activation))
ACTIVATIONS = {
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
}


@dataclass
class BranchNetwork:
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "sigmoid"

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise NetworkError("layer_dims needs at least an input and an output width")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise NetworkError("need one weight grid and one bias vector per layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[l + 1], self.layer_dims[l])
            if W.shape != expect:
                raise NetworkError(f"weights[{l}] has shape {W.shape}, expected {expect}")
            if b.shape != (expect[0],):
                raise NetworkError(f"biases[{l}] has shape {b.shape}, expected {(expect[0],)}")

    @property
    def n_hidden(self) -> int:
        """Hidden-layer count ``L``; the branch has ``L + 1`` weight layers."""
        return len(self.weights) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "BranchNetwork":
        return BranchNetwork(
            list(self.layer_dims),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class DualForwardCache:
    inputs: np.ndarray
    pre: List[np.ndarray]  # nonlinear-path pre-activations z^l
    act: List[np.ndarray]  # nonlinear-path activations a^l
    lin: List[np.ndarray]  # linear-path values
    use_linear: bool = True
    use_nonlinear: bool = True


def init_branch(layer_dims: Sequence[int], activation: str = "sigmoid", seed=0) -> BranchNetwork:
    """Symmetric-uniform fan-based initialisation with zero biases.

    ``weights[l]`` entries are i.i.d. on ``[-s, s]`` with
    ``s = sqrt(6 / (d_l + d_{l+1}))``. ``seed`` may be an int or a
    :class:`numpy.random.Generator`.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise NetworkError("layer_dims needs at least an input and an output width")
    if min(dims) < 1:
        raise NetworkError(f"every layer width must be >= 1, got {dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-s, s, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return BranchNetwork(dims, weights, biases, activation)


def forward_dual(net: BranchNetwork, X, use_linear=True, use_nonlinear=True):
    """Evaluate both paths on the columns of ``X`` (``d_0 x k``).

    Returns ``(nonlinear_out, linear_out, cache)``. A disabled path returns zeros.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != net.input_dim:
        raise NetworkError(f"input must have {net.input_dim} rows, got shape {X.shape}")
    sigma, _ = ACTIVATIONS[net.activation]
    k = X.shape[1]
    pre, act, lin = [], [], []
    a = X
    h = X
    for W, b in zip(net.weights, net.biases):
        if use_nonlinear:
            z = W @ a + b[:, None]
            a = sigma(z)
            pre.append(z)
            act.append(a)
        if use_linear:
            h = W @ h + b[:, None]
            lin.append(h)
    zeros = np.zeros((net.output_dim, k))
    nonlinear_out = act[-1] if use_nonlinear else zeros
    linear_out = lin[-1] if use_linear else zeros
    return nonlinear_out, linear_out, DualForwardCache(X, pre, act, lin, use_linear, use_nonlinear)


def reconstruct(net: BranchNetwork, X, use_linear=True, use_nonlinear=True) -> np.ndarray:
    """Branch reconstruction ``nonlinear_out + linear_out``."""
    nl, li, _ = forward_dual(net, X, use_linear, use_nonlinear)
    return nl + li


def backward_dual(net: BranchNetwork, cache: DualForwardCache, upstream):
    """Gradients of a loss given ``upstream = dLoss / d(reconstruction)``.

    Both paths share every weight and bias, so each parameter collects one
    term from each enabled path. Returns ``(dWeights, dBiases, dInput)``.
    """
    upstream = np.asarray(upstream, dtype=float)
    k = cache.inputs.shape[1]
    if upstream.shape != (net.output_dim, k):
        raise NetworkError(
            f"upstream shape {upstream.shape} does not match output {(net.output_dim, k)}"
        )
    n_layers = len(net.weights)
    if (cache.use_nonlinear and len(cache.pre) != n_layers) or (
        cache.use_linear and len(cache.lin) != n_layers
    ):
        raise NetworkError("cache was produced by a different network")
    _, dsigma = ACTIVATIONS[net.activation]

    dW = [np.zeros_like(W) for W in net.weights]
    db = [np.zeros_like(b) for b in net.biases]
    dX = np.zeros_like(cache.inputs)

    if cache.use_nonlinear:
        delta = upstream * dsigma(cache.pre[-1], cache.act[-1])
        for l in range(n_layers - 1, -1, -1):
            below = cache.act[l - 1] if l > 0 else cache.inputs
            dW[l] += delta @ below.T
            db[l] += delta.sum(axis=1)
            back = net.weights[l].T @ delta
            if l > 0:
                delta = back * dsigma(cache.pre[l - 1], cache.act[l - 1])
            else:
                dX += back

    if cache.use_linear:
        delta = upstream
        for l in range(n_layers - 1, -1, -1):
            below = cache.lin[l - 1] if l > 0 else cache.inputs
            dW[l] += delta @ below.T
            db[l] += delta.sum(axis=1)
            delta = net.weights[l].T @ delta
        dX += delta

    return dW, db, dX


def _chain(weights: Sequence[np.ndarray], size: int) -> np.ndarray:
    """Product ``weights[-1] @ ... @ weights[0]``; identity of ``size`` if empty."""
    out = np.eye(size)
    for W in weights:
        out = W @ out
    return out


def weight_product(net: BranchNetwork) -> np.ndarray:
    """``weights[L] @ ... @ weights[0]`` (``d_{L+1} x d_0``), biases excluded."""
    return _chain(net.weights, net.input_dim)


def _product_gradients(weights, d_product):
    """Gradients w.r.t. every factor of ``P = W_L ... W_0`` given ``dL/dP``."""
    grads = []
    for l in range(len(weights)):
        above = _chain(weights[l + 1 :], weights[l].shape[0])
        below = _chain(weights[:l], weights[0].shape[1])
        grads.append(above.T @ d_product @ below.T)
    return grads


def manifold_gradients(col_net: BranchNetwork, row_net: BranchNetwork, residual):
    """Weight gradients of ``1/(2n) ||I * (Y - P_c P_r^T)||^2``.

    ``residual`` must be the masked, normalised ``(1/n) I * (P_c P_r^T - Y)``
    (``m x n``). Biases get no gradient from this term.
    """
    if col_net.input_dim != row_net.input_dim:
        raise NetworkError(
            f"rank mismatch: column branch input {col_net.input_dim} "
            f"vs row branch input {row_net.input_dim}"
        )
    P_c = weight_product(col_net)
    P_r = weight_product(row_net)
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (P_c.shape[0], P_r.shape[0]):
        raise NetworkError(f"residual shape {residual.shape} does not match branch outputs")
    d_col = _product_gradients(col_net.weights, residual @ P_r)
    d_row = _product_gradients(row_net.weights, residual.T @ P_c)
    return d_col, d_row


CHECKPOINT_MAGIC = "deepmc-branch"
CHECKPOINT_VERSION = 1


def save_branch(net: BranchNetwork, path) -> None:
    """Write a plain-text checkpoint.

    Layout: ``deepmc-branch 1`` header, an ``activation`` line, a
    ``layer_dims`` line, then for each layer one ``W`` line and one ``b`` line
    holding the values in row-major order (``repr`` precision).
    """
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"activation {net.activation}",
        "layer_dims " + " ".join(str(d) for d in net.layer_dims),
    ]
    for W, b in zip(net.weights, net.biases):
        lines.append("W " + " ".join(repr(float(v)) for v in W.ravel()))
        lines.append("b " + " ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_branch(path) -> BranchNetwork:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != [CHECKPOINT_MAGIC, str(CHECKPOINT_VERSION)]:
        raise NetworkError(f"{path}: not a version-{CHECKPOINT_VERSION} branch checkpoint")
    try:
        activation = lines[1].split()[1]
        dims = [int(t) for t in lines[2].split()[1:]]
        weights, biases = [], []
        for l, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            w_line = lines[3 + 2 * l].split()
            b_line = lines[4 + 2 * l].split()
            if w_line[0] != "W" or b_line[0] != "b":
                raise NetworkError(f"{path}: malformed layer {l}")
            weights.append(np.array(w_line[1:], dtype=float).reshape(d_out, d_in))
            biases.append(np.array(b_line[1:], dtype=float).reshape(d_out))
    except (IndexError, ValueError) as exc:
        raise NetworkError(f"{path}: corrupt checkpoint ({exc})") from exc
    return BranchNetwork(dims, weights, biases, activation)
