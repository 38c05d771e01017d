"""iRprop+ : resilient propagation with weight backtracking.

Each parameter keeps its own step size. The step grows while the gradient
keeps its sign and shrinks when the sign flips; after a flip the previous
update is undone if the loss went up, and the stored gradient is zeroed so the
next step does not adapt again. Updates depend only on gradient signs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class RpropConfig:
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta_init: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0

    def __post_init__(self):
        if not self.eta_plus > 1:
            raise ValueError("eta_plus must be > 1")
        if not 0 < self.eta_minus < 1:
            raise ValueError("eta_minus must lie in (0, 1)")
        if not self.delta_min > 0:
            raise ValueError("delta_min must be > 0")
        if not self.delta_max > self.delta_min:
            raise ValueError("delta_max must exceed delta_min")
        if not self.delta_init > 0:
            raise ValueError("delta_init must be > 0")


@dataclass(frozen=True)
class RpropState:
    step: np.ndarray
    prev_grad: np.ndarray
    prev_update: np.ndarray
    prev_loss: float = np.inf
    n_iter: int = 0


def init_rprop(params, cfg: RpropConfig = RpropConfig()) -> RpropState:
    params = np.asarray(params, dtype=float)
    step = np.full(params.shape, cfg.delta_init)
    # clip only matters when delta_init lies outside [delta_min, delta_max]
    np.clip(step, cfg.delta_min, cfg.delta_max, out=step)
    return RpropState(step, np.zeros(params.shape), np.zeros(params.shape))


def rprop_step(state: RpropState, params, grad, loss_now: float, cfg: RpropConfig = RpropConfig()):
    """One iRprop+ step; ``grad`` and ``loss_now`` are evaluated at ``params``.

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    params = np.asarray(params, dtype=float)
    grad = np.array(grad, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NonFiniteGradient(
            f"non-finite gradient at {bad.size} entries (first index {bad[0]}) "
            f"on iteration {state.n_iter}"
        )

    s = state.prev_grad * grad
    grow, shrink, keep = s > 0, s < 0, s == 0

    step = state.step.copy()
    step[grow] = np.minimum(step[grow] * cfg.eta_plus, cfg.delta_max)
    step[shrink] = np.maximum(step[shrink] * cfg.eta_minus, cfg.delta_min)

    update = np.zeros_like(params)
    move = grow | keep
    update[move] = -np.sign(grad[move]) * step[move]

    new_params = params + update
    if loss_now > state.prev_loss:
        new_params[shrink] -= state.prev_update[shrink]

    grad[shrink] = 0.0
    new_state = replace(
        state,
        step=step,
        prev_grad=grad,
        prev_update=update,
        prev_loss=float(loss_now),
        n_iter=state.n_iter + 1,
    )
    return new_params, new_state


def minimize(fun, x0, cfg: RpropConfig = RpropConfig(), max_iter: int = 200, tol: float = 0.0):
    """Run iRprop+ on ``fun(x) -> (value, grad)``; returns ``(x, history)``."""
    x = np.array(x0, dtype=float)
    state = init_rprop(x, cfg)
    history = []
    for _ in range(max_iter):
        value, g = fun(x)
        history.append(value)
        if value <= tol:
            break
        x, state = rprop_step(state, x, g, value, cfg)
    return x, history
