"""Finite-difference check of the analytic gradient of the total objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .matrix import ObservedMatrix, build_observed
from .network import forward_dual, init_branch
from .objective import Hyperparameters, ModelState, total_loss

ACTIVATIONS = ("sigmoid", "tanh", "relu")


@dataclass(frozen=True)
class GradcheckResult:
    activation: str
    shape: tuple
    rank: int
    depth: int
    n_checked: int
    n_excluded: int
    max_rel_err: float


def random_instance(rng: np.random.Generator, activation: str, depth: int,
                    max_dim: int = 15, max_rank: int = 4):
    """Random state, partially observed data and weights for one check."""
    m, n = (int(d) for d in rng.integers(2, max_dim + 1, size=2))
    r = int(rng.integers(1, min(max_rank, m, n) + 1))
    col_dims = [r, *(int(d) for d in rng.integers(1, 6, size=depth)), m]
    row_dims = [r, *(int(d) for d in rng.integers(1, 6, size=depth)), n]
    col = init_branch(col_dims, activation, rng)
    row = init_branch(row_dims, activation, rng)
    for b in col.biases + row.biases:
        b[:] = rng.normal(scale=0.2, size=b.shape)
    state = ModelState(col, row, rng.normal(size=(r, n)), rng.normal(size=(m, r)))
    Y = build_observed(rng.normal(size=(m, n)), (rng.random((m, n)) < 0.7).astype(np.int8))
    hp = Hyperparameters(*rng.uniform(0.01, 1.0, size=4))
    return state, Y, hp


def _relu_pattern(state: ModelState) -> np.ndarray:
    _, _, c = forward_dual(state.col_net, state.V)
    _, _, r = forward_dual(state.row_net, state.U.T)
    return np.concatenate([(z > 0).ravel() for z in c.pre + r.pre])


def check_gradient(state: ModelState, Y: ObservedMatrix, hp: Hyperparameters,
                   h: float = 1e-5, floor: float = 1e-6, kink_radius: float = 1e-4):
    """Largest relative error between analytic and central-difference gradients.

    For ReLU, coordinates whose moves by ``kink_radius`` change the active set
    are skipped since the objective is not differentiable there.
    Returns ``(max_rel_err, n_checked, n_excluded)``.
    """
    x = state.to_vector()
    analytic = total_loss(state, Y, hp)[1].to_vector()
    relu = state.col_net.activation == "relu"
    base = _relu_pattern(state) if relu else None

    def f(v):
        return total_loss(state.with_vector(v), Y, hp)[0]

    worst, checked, excluded = 0.0, 0, 0
    xp = x.copy()
    for i in range(x.size):
        if relu:
            skip = False
            for d in (kink_radius, -kink_radius):
                xp[i] = x[i] + d
                if not np.array_equal(_relu_pattern(state.with_vector(xp)), base):
                    skip = True
                    break
            xp[i] = x[i]
            if skip:
                excluded += 1
                continue
        xp[i] = x[i] + h
        fp = f(xp)
        xp[i] = x[i] - h
        fm = f(xp)
        xp[i] = x[i]
        num = (fp - fm) / (2 * h)
        err = abs(analytic[i] - num) / max(abs(analytic[i]), abs(num), floor)
        worst = max(worst, err)
        checked += 1
    return worst, checked, excluded


def run_suite(n_instances: int = 21, seed: int = 0,
              log: Optional[Callable[[GradcheckResult], None]] = None) -> List[GradcheckResult]:
    """``n_instances`` random checks cycling through activations and depths 0, 1, 2."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_instances):
        act = ACTIVATIONS[k % len(ACTIVATIONS)]
        depth = (k // len(ACTIVATIONS)) % 3
        state, Y, hp = random_instance(rng, act, depth)
        err, checked, excluded = check_gradient(state, Y, hp)
        res = GradcheckResult(act, Y.shape, state.rank, depth, checked, excluded, float(err))
        if log is not None:
            log(res)
        out.append(res)
    return out
