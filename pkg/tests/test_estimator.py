import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from deepmc.estimator import ALSCompleter, DeepMatrixCompleter, check_observed

pytestmark = pytest.mark.filterwarnings("ignore:rank .* is not below:RuntimeWarning")


def low_rank_with_nans(seed=0, m=12, n=15, r=2, hide=0.3):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(m, r)) @ rng.normal(size=(r, n))
    X = Y.copy()
    X[rng.random((m, n)) < hide] = np.nan
    return Y, X


def test_check_observed_from_nan_and_mask():
    X = np.array([[1.0, np.nan], [3.0, 4.0]])
    Y = check_observed(X)
    np.testing.assert_array_equal(Y.indicator, [[1, 0], [1, 1]])
    assert Y.values[0, 1] == 0.0
    Y2 = check_observed(np.nan_to_num(X), mask=[[1, 0], [1, 1]])
    np.testing.assert_array_equal(Y2.values, Y.values)
    with pytest.raises(ValueError, match="mask shape"):
        check_observed(X, mask=np.ones((3, 2)))
    with pytest.raises(ValueError, match="NaN"):
        check_observed(X, mask=np.ones((2, 2)))
    with pytest.raises(ValueError, match="no observed"):
        check_observed(np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        check_observed(np.array([[1.0, np.inf]]))


def test_params_round_trip():
    est = DeepMatrixCompleter(rank=3, col_hidden=(5,), gamma=0.5)
    params = est.get_params()
    assert params["rank"] == 3 and params["gamma"] == 0.5 and params["activation"] == "tanh"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lam=0.1)
    assert est.lam == 0.1


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DeepMatrixCompleter().transform(np.ones((3, 3)))
    with pytest.raises(NotFittedError):
        ALSCompleter().transform(np.ones((3, 3)))


def test_fit_transform_fills_only_missing():
    Y, X = low_rank_with_nans()
    est = DeepMatrixCompleter(rank=2, col_hidden=(4,), row_hidden=(4,), max_iter=60)
    out = est.fit_transform(X)
    observed = ~np.isnan(X)
    np.testing.assert_array_equal(out[observed], X[observed])
    assert np.isfinite(out).all()
    assert est.reconstruction_.shape == X.shape and est.n_iter_ == 60
    assert len(est.loss_history_) == 60 and est.loss_history_[-1] < est.loss_history_[0]
    np.testing.assert_array_equal(est.predict(), est.reconstruction_)


def test_deterministic_under_random_state():
    _, X = low_rank_with_nans(1)
    kw = dict(rank=2, col_hidden=(3,), row_hidden=(3,), max_iter=20, random_state=4)
    a = DeepMatrixCompleter(**kw).fit(X).reconstruction_
    b = DeepMatrixCompleter(**kw).fit(X).reconstruction_
    np.testing.assert_array_equal(a, b)


def test_transform_rejects_other_shape():
    _, X = low_rank_with_nans()
    est = DeepMatrixCompleter(rank=2, col_hidden=(), row_hidden=(), max_iter=5).fit(X)
    with pytest.raises(ValueError, match="transductive"):
        est.transform(X[:, :-1])


def test_early_stopping_option():
    _, X = low_rank_with_nans(2, hide=0.1)
    est = DeepMatrixCompleter(rank=2, col_hidden=(4,), row_hidden=(4,), max_iter=400,
                              early_stopping=True, validation_fraction=0.2, n_iter_no_change=5)
    est.fit(X)
    assert len(est.val_history_) == est.n_iter_


def test_als_completer_recovers_low_rank():
    Y, X = low_rank_with_nans(3, m=30, n=40, r=3)
    est = ALSCompleter(rank=3, n_iter=100, ridge=1e-8)
    out = est.fit_transform(X)
    hidden = np.isnan(X)
    assert np.linalg.norm((out - Y)[hidden]) / np.linalg.norm(Y[hidden]) <= 1e-3
    assert est.row_factors_.shape == (30, 3) and est.col_factors_.shape == (3, 40)
    assert np.all(np.diff(est.objective_history_) <= 1e-12 * est.objective_history_[0])
