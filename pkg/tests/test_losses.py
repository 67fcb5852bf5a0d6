import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dimts import autodiff as ad
from dimts.losses import (LossWeights, correlation_shift_loss, ddpm_loss, fourier_loss,
                          median_bandwidth, mmd, pairwise_correlations, total_loss)

from conftest import check_grads


def mmd_double_sum(X, Y, s):
    # O(n^2) oracle written as explicit loops
    k = lambda a, b: np.exp(-(a - b) ** 2 / (2 * s * s))  # noqa: E731
    xx = sum(k(a, b) for a in X for b in X) / len(X) ** 2
    yy = sum(k(a, b) for a in Y for b in Y) / len(Y) ** 2
    xy = sum(k(a, b) for a in X for b in Y) / (len(X) * len(Y))
    return xx + yy - 2 * xy


def pearson(a, b):
    a, b = a - a.mean(), b - b.mean()
    return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))


# reconstruction


def test_ddpm_loss_values(rng):
    x = rng.standard_normal((4, 3))
    assert float(ddpm_loss(x, x).value) == 0.0
    assert float(ddpm_loss(np.zeros((4, 3)), np.ones((4, 3))).value) == 1.0
    y = rng.standard_normal((4, 3))
    assert float(ddpm_loss(x, y).value) == pytest.approx(np.sum((x - y) ** 2) / 12, abs=1e-15)
    with pytest.raises(ad.ShapeError):
        ddpm_loss(np.zeros((4, 3)), np.zeros((3, 4)))


# Fourier


def test_fourier_loss_identical_is_zero(rng):
    x = rng.standard_normal((2, 8, 3))
    assert float(fourier_loss(x, x).value) == 0.0


@pytest.mark.parametrize("L", [8, 12])
def test_fourier_loss_parseval(L, rng):
    x0 = rng.standard_normal((L, 1))
    x1 = rng.standard_normal((L, 1))
    assert float(fourier_loss(x0, x1).value) == pytest.approx(L * np.sum((x0 - x1) ** 2), rel=1e-12)


def test_fourier_loss_averages_channels_and_windows(rng):
    x0 = rng.standard_normal((3, 8, 2))
    x1 = rng.standard_normal((3, 8, 2))
    per = [8 * np.sum((x0[b, :, c] - x1[b, :, c]) ** 2) for b in range(3) for c in range(2)]
    assert float(fourier_loss(x0, x1).value) == pytest.approx(np.mean(per), rel=1e-12)


def test_fourier_loss_gradient(rng):
    x0 = rng.standard_normal((2, 8, 2))
    assert check_grads(lambda y: fourier_loss(x0, y), rng.standard_normal((2, 8, 2))) < 1e-4


# correlations


def test_pairwise_correlations_special_cases(rng):
    a = rng.standard_normal(10)
    x = np.stack([a, a, -a], axis=-1)[None]
    r, deg = pairwise_correlations(x)
    np.testing.assert_allclose(r.value[0], [1.0, -1.0, -1.0], atol=1e-14)
    assert not deg.any()


def test_pairwise_correlations_covariance_oracle(rng):
    x = rng.standard_normal((5, 12, 4))
    r, _ = pairwise_correlations(x)
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    for b in range(5):
        for p, (i, j) in enumerate(pairs):
            cov = np.cov(x[b, :, i], x[b, :, j])
            assert r.value[b, p] == pytest.approx(cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]), abs=1e-10)


def test_degenerate_window_gives_zero(rng):
    x = rng.standard_normal((2, 6, 3))
    x[1, :, 0] = 0.3
    r, deg = pairwise_correlations(x)
    np.testing.assert_array_equal(deg[1], [True, True, False])
    np.testing.assert_array_equal(r.value[1, :2], 0.0)
    assert np.all(np.isfinite(r.value))


def test_pairwise_correlation_gradient(rng):
    w = rng.standard_normal((3, 3))
    assert check_grads(lambda x: ad.sum(ad.mul(pairwise_correlations(x)[0], w)),
                       rng.standard_normal((3, 7, 3))) < 1e-4


# MMD


def test_mmd_single_points_closed_form():
    assert float(mmd(np.array([0.0]), np.array([1.0]), 1.0).value) == pytest.approx(
        2 * (1 - np.exp(-0.5)), abs=1e-12)


def test_mmd_same_multiset_is_zero(rng):
    X = rng.standard_normal(7)
    assert float(mmd(X, rng.permutation(X), 0.5).value) == pytest.approx(0.0, abs=1e-14)


def test_mmd_matches_double_sum(rng):
    for _ in range(10):
        X, Y = rng.standard_normal(int(rng.integers(1, 9))), rng.standard_normal(int(rng.integers(1, 9)))
        s = float(rng.uniform(0.2, 2))
        assert float(mmd(X, Y, s).value) == pytest.approx(mmd_double_sum(X, Y, s), abs=1e-12)


def test_mmd_nonnegative_and_symmetric():
    rng = np.random.default_rng(99)
    for _ in range(100):
        X = rng.standard_normal(int(rng.integers(1, 10)))
        Y = rng.standard_normal(int(rng.integers(1, 10))) + rng.uniform(-1, 1)
        s = float(rng.uniform(0.1, 3))
        a, b = float(mmd(X, Y, s).value), float(mmd(Y, X, s).value)
        assert a >= -1e-15
        assert a == pytest.approx(b, abs=1e-14)


def test_mmd_errors_and_gradient(rng):
    with pytest.raises(ValueError):
        mmd(np.zeros(0), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        mmd(np.zeros(2), np.ones(2), 0.0)
    X = rng.standard_normal(5)
    assert check_grads(lambda y: mmd(X, y, 0.7), rng.standard_normal(4)) < 1e-4


def test_median_bandwidth(rng):
    s = np.array([[0.0, 1.0, 3.0]])
    assert median_bandwidth(s) == pytest.approx(2.0)
    assert median_bandwidth(np.zeros((2, 4))) == pytest.approx(0.05)


# correlation shift


def test_correlation_shift_identical_is_zero(rng):
    x = rng.standard_normal((4, 10, 3))
    assert float(correlation_shift_loss(x, x).value) == pytest.approx(0.0, abs=1e-14)


def test_correlation_shift_decomposes_per_pair(rng):
    x0 = rng.standard_normal((4, 10, 3))
    x1 = rng.standard_normal((4, 10, 3))
    s = 0.4
    vals = []
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        r0 = [pearson(x0[b, :, i], x0[b, :, j]) for b in range(4)]
        r1 = [pearson(x1[b, :, i], x1[b, :, j]) for b in range(4)]
        vals.append(mmd_double_sum(r0, r1, s))
    assert float(correlation_shift_loss(x0, x1, s).value) == pytest.approx(np.mean(vals), abs=1e-12)


def test_correlation_shift_two_channels_single_pair(rng):
    x0 = rng.standard_normal((5, 9, 2))
    x1 = rng.standard_normal((5, 9, 2))
    r0 = [pearson(x0[b, :, 0], x0[b, :, 1]) for b in range(5)]
    r1 = [pearson(x1[b, :, 0], x1[b, :, 1]) for b in range(5)]
    assert float(correlation_shift_loss(x0, x1, 0.3).value) == pytest.approx(
        mmd_double_sum(r0, r1, 0.3), abs=1e-12)


def test_correlation_shift_needs_batch(rng):
    with pytest.raises(ValueError):
        correlation_shift_loss(rng.standard_normal((1, 5, 3)), rng.standard_normal((1, 5, 3)))


def test_correlation_shift_gradient(rng):
    x0 = rng.standard_normal((4, 6, 3))
    assert check_grads(lambda y: correlation_shift_loss(x0, y, 0.5), rng.standard_normal((4, 6, 3))) < 1e-4


# total


def test_total_loss_reductions(rng):
    x0 = rng.standard_normal((4, 8, 3))
    x1 = rng.standard_normal((4, 8, 3))
    total, parts = total_loss(x0, x1, LossWeights(0.0, 0.0))
    assert float(total.value) == float(ddpm_loss(x0, x1).value)
    zero, zparts = total_loss(x0, x0)
    assert float(zero.value) == pytest.approx(0.0, abs=1e-14)
    assert set(parts) == {"ddpm", "fourier", "correlation", "total"}


def test_total_loss_linear_in_lambda1(rng):
    x0 = rng.standard_normal((4, 8, 3))
    x1 = rng.standard_normal((4, 8, 3))
    f = lambda l1: float(total_loss(x0, x1, LossWeights(l1, 0.02))[0].value)  # noqa: E731
    slope = (f(0.3) - f(0.1)) / 0.2
    assert slope == pytest.approx(float(fourier_loss(x0, x1).value), rel=1e-9)
    assert f(0.5) == pytest.approx(f(0.1) + 0.4 * slope, rel=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.0)
    with pytest.raises(ValueError):
        LossWeights(0.0, float("nan"))


def test_total_loss_gradient(rng):
    x0 = rng.standard_normal((3, 8, 2))
    fn = lambda y: total_loss(x0, y, LossWeights(0.1, 0.5), bandwidth=0.3)[0]  # noqa: E731
    assert check_grads(fn, rng.standard_normal((3, 8, 2))) < 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 6, 2), elements=st.floats(-2, 2)),
       arrays(np.float64, (3, 6, 2), elements=st.floats(-2, 2)))
def test_all_losses_nonnegative(x0, x1):
    _, parts = total_loss(x0, x1)
    assert all(v >= -1e-12 for v in parts.values())
