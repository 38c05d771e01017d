"""scikit-learn style wrappers.

Both completers are transductive: ``fit`` learns from the observed entries of
one matrix and ``transform`` returns that matrix with its missing entries
filled. Missing entries are given either as ``NaN`` or through an explicit
``mask`` (1 = observed).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .evaluation import als_factors
from .matrix import ObservedMatrix, build_observed, unscale
from .objective import Hyperparameters
from .optimizer import RpropConfig
from .trainer import EarlyStopping, ModelConfig, fit as fit_model, predict


def check_observed(X, mask=None) -> ObservedMatrix:
    """Validate ``X`` (NaN = missing) and an optional 0/1 ``mask``."""
    X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan", ensure_min_samples=1)
    if mask is None:
        indicator = (~np.isnan(X)).astype(np.int8)
    else:
        indicator = check_array(mask, dtype=None, ensure_all_finite=True)
        if indicator.shape != X.shape:
            raise ValueError(f"mask shape {indicator.shape} does not match X shape {X.shape}")
        if np.isnan(X[indicator.astype(bool)]).any():
            raise ValueError("X has NaN at positions the mask marks as observed")
    if not indicator.any():
        raise ValueError("X has no observed entries")
    return build_observed(np.nan_to_num(X, nan=0.0), indicator)


def _check_shape(est, Y: ObservedMatrix):
    if Y.shape != est.shape_:
        raise ValueError(
            f"{type(est).__name__} was fitted on a {est.shape_} matrix, got {Y.shape}; "
            "completion is transductive"
        )


class _CompleterMixin(TransformerMixin):
    def transform(self, X, mask=None):
        """Return ``X`` with missing entries replaced by the fitted reconstruction."""
        check_is_fitted(self, "reconstruction_")
        Y = check_observed(X, mask)
        _check_shape(self, Y)
        return np.where(Y.mask, Y.values, self.reconstruction_)

    def fit_transform(self, X, y=None, mask=None):
        return self.fit(X, mask=mask).transform(X, mask=mask)


class DeepMatrixCompleter(_CompleterMixin, BaseEstimator):
    """Two-branch network completer trained with iRprop+.

    Parameters
    ----------
    rank : int
        Width of the latent inputs of both branches.
    col_hidden, row_hidden : tuple of int
        Hidden widths of the column branch (output ``m``) and row branch (output ``n``).
    activation : {"sigmoid", "tanh", "relu"}
    alpha, beta, gamma, lam : float
        Weights of the column loss, row loss, weight-product loss and decay.
    max_iter : int
        iRprop+ iterations.
    early_stopping : bool
        Hold out ``validation_fraction`` of the observed entries and stop after
        ``n_iter_no_change`` iterations without improving by ``tol``.
    prediction_mode : {"column", "row", "average"}
    target_range : tuple or None
        Interval the observed data is mapped into; ``None`` picks one per activation.
    random_state : int

    Attributes
    ----------
    reconstruction_ : ndarray of shape (m, n)
        Prediction for every entry, in the units of ``X``.
    loss_history_ : list of float
    n_iter_ : int
    state_ : ModelState
    scaling_ : ScalingRecord
    """

    def __init__(
        self,
        rank=10,
        col_hidden=(20, 40),
        row_hidden=(25, 50),
        activation="tanh",
        alpha=1.0,
        beta=1.0,
        gamma=0.01,
        lam=0.01,
        max_iter=1000,
        early_stopping=False,
        validation_fraction=0.05,
        n_iter_no_change=50,
        tol=1e-5,
        prediction_mode="column",
        disable_linear_path=False,
        disable_nonlinear_path=False,
        target_range=None,
        eta_plus=1.2,
        eta_minus=0.5,
        delta_init=0.1,
        delta_min=1e-6,
        delta_max=50.0,
        random_state=0,
    ):
        self.rank = rank
        self.col_hidden = col_hidden
        self.row_hidden = row_hidden
        self.activation = activation
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lam = lam
        self.max_iter = max_iter
        self.early_stopping = early_stopping
        self.validation_fraction = validation_fraction
        self.n_iter_no_change = n_iter_no_change
        self.tol = tol
        self.prediction_mode = prediction_mode
        self.disable_linear_path = disable_linear_path
        self.disable_nonlinear_path = disable_nonlinear_path
        self.target_range = target_range
        self.eta_plus = eta_plus
        self.eta_minus = eta_minus
        self.delta_init = delta_init
        self.delta_min = delta_min
        self.delta_max = delta_max
        self.random_state = random_state

    def _config(self, shape) -> ModelConfig:
        early = (
            EarlyStopping(self.validation_fraction, self.n_iter_no_change, self.tol)
            if self.early_stopping
            else None
        )
        return ModelConfig.for_shape(
            shape,
            int(self.rank),
            tuple(self.col_hidden),
            tuple(self.row_hidden),
            activation=self.activation,
            hp=Hyperparameters(self.alpha, self.beta, self.gamma, self.lam),
            rprop=RpropConfig(
                self.eta_plus, self.eta_minus, self.delta_init, self.delta_min, self.delta_max
            ),
            max_iters=int(self.max_iter),
            early_stop=early,
            prediction_mode=self.prediction_mode,
            disable_linear_path=self.disable_linear_path,
            disable_nonlinear_path=self.disable_nonlinear_path,
            target_range=self.target_range,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y=None, mask=None):
        Y = check_observed(X, mask)
        self.config_ = cfg = self._config(Y.shape)
        res = fit_model(Y, cfg)
        self.state_ = res.state
        self.scaling_ = res.scaling
        self.loss_history_ = res.loss_history
        self.val_history_ = res.val_history
        self.n_iter_ = res.iterations_run
        self.shape_ = Y.shape
        self.reconstruction_ = self.predict(mode=cfg.prediction_mode)
        return self

    def predict(self, mode=None):
        """Full reconstruction in data units from the chosen branch(es)."""
        check_is_fitted(self, "state_")
        mode = mode or self.prediction_mode
        cfg = self.config_
        return unscale(predict(self.state_, mode, cfg.use_linear, cfg.use_nonlinear), self.scaling_)


class ALSCompleter(_CompleterMixin, BaseEstimator):
    """Linear ``Y ~ U V`` completion by alternating ridge least squares."""

    def __init__(self, rank=10, n_iter=50, ridge=1e-3, random_state=0):
        self.rank = rank
        self.n_iter = n_iter
        self.ridge = ridge
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        Y = check_observed(X, mask)
        self.objective_history_ = []
        seed = 0 if self.random_state is None else int(self.random_state)
        U, V = als_factors(Y, int(self.rank), int(self.n_iter), float(self.ridge), seed,
                           history=self.objective_history_)
        self.row_factors_, self.col_factors_ = U, V
        self.reconstruction_ = U @ V
        self.shape_ = Y.shape
        return self
