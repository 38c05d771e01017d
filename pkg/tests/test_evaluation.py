import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepmc.evaluation import als_complete, als_factors, als_objective, evaluate, nmae, psnr, ssim
from deepmc.matrix import build_observed


def naive_psnr(t, h):
    N = len(t)
    err = sum((a - b) ** 2 for a, b in zip(t, h))
    return 10 * math.log10(N * max(t) ** 2 / err)


def naive_ssim(t, h):
    N = len(t)
    mt, mh = sum(t) / N, sum(h) / N
    vt = sum((a - mt) ** 2 for a in t) / N
    vh = sum((b - mh) ** 2 for b in h) / N
    cov = sum((a - mt) * (b - mh) for a, b in zip(t, h)) / N
    D = max(t) - min(t)
    c1, c2 = (0.01 * D) ** 2, (0.03 * D) ** 2
    return (2 * mh * mt + c1) * (2 * cov + c2) / ((mh**2 + mt**2 + c1) * (vh + vt + c2))


def naive_nmae(t, h, hidden, lo, hi):
    picked = [abs(a - b) for a, b, k in zip(t, h, hidden) if k]
    return sum(picked) / ((hi - lo) * len(picked))


def test_psnr_identity_is_inf():
    y = np.arange(6.0).reshape(2, 3)
    assert psnr(y, y) == math.inf
    assert evaluate(y, y).psnr_infinite


def test_psnr_hand_case():
    y = np.array([[1.0, 0.0], [0.0, 0.0]])
    yh = y + np.array([[0.1, 0.1], [0.1, 0.1]])  # squared error 0.04
    assert psnr(y, yh) == pytest.approx(20.0, abs=1e-12)


def test_ssim_identity_and_anticorrelation(rng):
    y = rng.normal(size=(10, 12))
    assert abs(ssim(y, y) - 1.0) <= 1e-12
    z = y - y.mean()
    assert ssim(z, -z) < 0


def test_nmae_hand_case():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    h = np.array([[2.0, 2.0], [3.0, 1.0]])
    hidden = np.array([[1, 0], [0, 1]])
    assert nmae(t, h, hidden, (1, 5)) == 0.5


def test_nmae_errors():
    t = np.zeros((2, 2))
    with pytest.raises(ValueError):
        nmae(t, t, np.zeros((2, 2)), (1, 5))
    with pytest.raises(ValueError):
        nmae(t, t, np.ones((2, 2)), (5, 5))
    with pytest.raises(ValueError):
        psnr(t, np.zeros((2, 3)))


def test_metrics_match_naive_on_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m, n = rng.integers(2, 9, size=2)
        t = rng.uniform(0.5, 5, size=(m, n))
        h = t + rng.normal(scale=0.3, size=(m, n))
        hidden = rng.random((m, n)) < 0.4
        hidden.flat[0] = True
        tl, hl, kl = t.ravel().tolist(), h.ravel().tolist(), hidden.ravel().tolist()
        assert psnr(t, h) == pytest.approx(naive_psnr(tl, hl), rel=1e-12, abs=1e-12)
        assert ssim(t, h) == pytest.approx(naive_ssim(tl, hl), rel=1e-12, abs=1e-12)
        assert nmae(t, h, hidden, (0.5, 5)) == pytest.approx(naive_nmae(tl, hl, kl, 0.5, 5), rel=1e-12, abs=1e-12)


def test_evaluate_hidden_only(rng):
    t = rng.uniform(1, 5, size=(6, 7))
    h = t.copy()
    hidden = np.zeros((6, 7), bool)
    hidden[2:4, 1:5] = True
    h[hidden] += 0.5
    h[~hidden] += 3.0  # must not count
    rep = evaluate(t, h, hidden, (1, 5))
    assert rep.evaluated_on == "hidden-only"
    assert rep.nmae == pytest.approx(0.5 / 4, rel=1e-12)
    assert rep.psnr == pytest.approx(psnr(t[hidden], h[hidden]))
    assert evaluate(t, h).evaluated_on == "full"


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_psnr_error_times_ten_is_minus_20db(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.1, 3, size=(5, 4))
    e = rng.normal(size=(5, 4))
    assert psnr(t, t + e) - psnr(t, t + 10 * e) == pytest.approx(20.0, abs=1e-9)


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_ssim_symmetric_when_ranges_match(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 6))
    b = rng.permutation(a.ravel()).reshape(4, 6)  # same range, so same constants
    assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12, abs=1e-14)
    assert ssim(a, b) <= 1.0


@given(seed=st.integers(0, 2**31 - 1), s=st.floats(0.1, 100), c=st.floats(-50, 50))
@settings(max_examples=30, deadline=None)
def test_nmae_affine_invariance(seed, s, c):
    rng = np.random.default_rng(seed)
    t, h = rng.uniform(1, 5, size=(2, 5, 5))
    hidden = rng.random((5, 5)) < 0.5
    hidden[0, 0] = True
    base = nmae(t, h, hidden, (1, 5))
    moved = nmae(s * t + c, s * h + c, hidden, (s + c, 5 * s + c))
    assert moved == pytest.approx(base, rel=1e-9)


def test_als_rank_one_fully_observed():
    rng = np.random.default_rng(1)
    Y = np.outer(rng.normal(size=8), rng.normal(size=11))
    obs = build_observed(Y, np.ones_like(Y))
    Yh = als_complete(obs, rank=1, iters=100, ridge=1e-8, seed=0)
    assert np.linalg.norm(Yh - Y) / np.linalg.norm(Y) <= 1e-6


def test_als_rank_three_recovery():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 50))
    ind = (rng.random(Y.shape) >= 0.3).astype(int)
    Yh = als_complete(build_observed(Y, ind), rank=3, iters=100, ridge=1e-8, seed=0)
    hidden = ind == 0
    assert np.linalg.norm((Yh - Y)[hidden]) / np.linalg.norm(Y[hidden]) <= 1e-3


def test_als_objective_non_increasing_and_deterministic():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(12, 15))
    obs = build_observed(Y, (rng.random(Y.shape) < 0.6).astype(int))
    hist = []
    U, V = als_factors(obs, 3, iters=30, ridge=0.1, seed=5, history=hist)
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])
    assert hist[-1] == pytest.approx(als_objective(obs, U, V, 0.1))
    np.testing.assert_array_equal(als_complete(obs, 3, 30, 0.1, 5), U @ V)


def test_als_empty_column_uses_ridge():
    Y = np.ones((4, 5))
    ind = np.ones((4, 5), int)
    ind[:, 2] = 0
    out = als_complete(build_observed(Y, ind), 1, iters=20, ridge=1e-3)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out[:, 2], 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        als_complete(build_observed(Y, ind), 1, iters=5, ridge=0.0)
