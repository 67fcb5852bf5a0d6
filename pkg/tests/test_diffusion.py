import numpy as np
import pytest
from scipy import integrate

from dimts.diffusion import (DiffusionSchedule, cosine_schedule, forward_noise, posterior_coefficients,
                             posterior_mean, reverse_sigma, reverse_step, sample)


@pytest.fixture(scope="module")
def sched():
    return cosine_schedule(500)


def closed_form_alpha_bar(t, T, s=0.008):
    f = lambda u: np.cos(((u / T + s) / (1 + s)) * np.pi / 2) ** 2  # noqa: E731
    return f(t) / f(0)


def test_schedule_shape_and_monotonicity(sched):
    ab = sched.alpha_bar
    assert ab[0] == 1.0
    assert np.all(np.diff(ab[1:]) < 0)
    assert ab[500] < 0.01
    assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] <= 0.999))
    np.testing.assert_allclose(sched.alpha, 1 - sched.beta)


def test_schedule_self_consistency(sched):
    np.testing.assert_allclose(sched.alpha_bar, np.cumprod(sched.alpha), atol=1e-12)
    # away from the clipped tail the table follows the closed form
    t = np.arange(1, 490)
    np.testing.assert_allclose(sched.alpha_bar[t], closed_form_alpha_bar(t, 500), rtol=1e-10)


def test_schedule_rejects_bad_T():
    with pytest.raises(ValueError):
        cosine_schedule(0)


def test_forward_noise_zero_noise_limit(sched, rng):
    x0 = rng.standard_normal((4, 3))
    out = forward_noise(x0, 1, sched, rng, eps=np.zeros_like(x0))
    np.testing.assert_allclose(out.x_t, np.sqrt(sched.alpha_bar[1]) * x0)
    beta = np.array([0.0, 0.0, 0.5])
    flat = DiffusionSchedule(2, beta, 1 - beta, np.cumprod(1 - beta))
    np.testing.assert_array_equal(forward_noise(x0, 1, flat, rng).x_t, x0)


def test_forward_noise_determinism_and_range(sched):
    x0 = np.ones((2, 3))
    a = forward_noise(x0, 10, sched, np.random.default_rng(5))
    b = forward_noise(x0, 10, sched, np.random.default_rng(5))
    np.testing.assert_array_equal(a.eps, b.eps)
    np.testing.assert_array_equal(a.x_t, b.x_t)
    for t in (0, 501):
        with pytest.raises(ValueError):
            forward_noise(x0, t, sched, np.random.default_rng(0))


def test_forward_noise_terminal_marginal(sched):
    rng = np.random.default_rng(11)
    n = 10_000
    x_T = forward_noise(np.full(n, 0.7), 500, sched, rng).x_t
    assert abs(x_T.mean()) < 3 / np.sqrt(n) + np.sqrt(sched.alpha_bar[500]) * 0.7
    assert abs(x_T.var() - 1) < 3 * np.sqrt(2 / n)


@pytest.mark.parametrize("t", [50, 250])
def test_forward_marginal_variance(t, sched):
    rng = np.random.default_rng(t)
    n = 20_000
    x0 = rng.standard_normal(n)
    x_t = forward_noise(x0, t, sched, rng).x_t
    assert x_t.var() == pytest.approx(sched.alpha_bar[t] + 1 - sched.alpha_bar[t], abs=0.05)
    cov = np.mean(x_t * x0)
    assert cov == pytest.approx(np.sqrt(sched.alpha_bar[t]), abs=0.03)


def test_per_sample_steps(sched, rng):
    x0 = rng.standard_normal((3, 4, 2))
    t = np.array([1, 100, 400])
    eps = rng.standard_normal(x0.shape)
    out = forward_noise(x0, t, sched, rng, eps=eps)
    for i in range(3):
        ab = sched.alpha_bar[t[i]]
        np.testing.assert_allclose(out.x_t[i], np.sqrt(ab) * x0[i] + np.sqrt(1 - ab) * eps[i])


def test_posterior_coefficient_sum(sched):
    t = 250
    ab, ab_prev, b, a = sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.beta[t], sched.alpha[t]
    c0, ct = posterior_coefficients(t, sched)
    expected = np.sqrt(ab_prev) * b / (1 - ab) + np.sqrt(a) * (1 - ab_prev) / (1 - ab)
    assert c0 + ct == pytest.approx(expected, abs=1e-15)
    assert posterior_mean(1.0, 1.0, t, sched) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("t", [2, 37, 250, 499])
def test_posterior_matches_quadrature(t, sched):
    # p(x_{t-1} | x_t, x0) is proportional to q(x_t | x_{t-1}) q(x_{t-1} | x0)
    x0, x_t = 0.6, -0.4
    a, b = sched.alpha[t], sched.beta[t]
    ab_prev = sched.alpha_bar[t - 1]
    m_prior, v_prior = np.sqrt(ab_prev) * x0, 1 - ab_prev

    def log_density(x):
        return -(x_t - np.sqrt(a) * x) ** 2 / (2 * b) - (x - m_prior) ** 2 / (2 * v_prior)

    # integration window: the likelihood peak and the prior peak, padded generously
    peak = x_t / np.sqrt(a)
    width = 30 * np.sqrt(min(b / a, v_prior))
    lo = min(peak, m_prior) - width
    hi = max(peak, m_prior) + width
    grid = np.linspace(lo, hi, 200_001)
    top = grid[np.argmax(log_density(grid))]
    shift = log_density(top)

    def density(x):
        return np.exp(log_density(x) - shift)

    opts = dict(epsabs=0, epsrel=1e-12, limit=500, points=[top])
    z = integrate.quad(density, lo, hi, **opts)[0]
    mean = integrate.quad(lambda x: x * density(x), lo, hi, **opts)[0] / z
    var = integrate.quad(lambda x: (x - mean) ** 2 * density(x), lo, hi, **opts)[0] / z
    assert posterior_mean(x0, x_t, t, sched) == pytest.approx(mean, abs=1e-6)
    assert sched.posterior_variance(t) == pytest.approx(var, rel=1e-6)


def test_posterior_mean_small_beta_limit():
    beta = np.array([0.0, 0.2, 1e-12])
    alpha = 1 - beta
    s = DiffusionSchedule(2, beta, alpha, np.cumprod(alpha))
    assert posterior_mean(3.0, -0.25, 2, s) == pytest.approx(-0.25, abs=1e-6)


def test_reverse_step_no_noise_at_t1(sched, rng):
    x = rng.standard_normal((2, 4, 3))
    model = lambda x_t, t: np.zeros_like(x_t)  # noqa: E731
    a = reverse_step(x, 1, model, sched, np.random.default_rng(0))
    b = reverse_step(x, 1, model, sched, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    assert a.shape == x.shape
    assert reverse_sigma(1, sched, "beta") == 0.0
    assert reverse_sigma(10, sched, "beta") == pytest.approx(np.sqrt(sched.beta[10]))
    assert reverse_sigma(10, sched, "posterior") == pytest.approx(np.sqrt(sched.posterior_variance(10)))
    with pytest.raises(ValueError):
        reverse_sigma(10, sched, "nope")


def test_reverse_step_shape_mismatch(sched, rng):
    with pytest.raises(ValueError):
        reverse_step(np.zeros((4, 3)), 5, lambda x, t: np.zeros((3, 3)), sched, rng)


def test_perfect_denoiser_reconstructs(sched, rng):
    x0 = rng.uniform(-1, 1, (3, 8, 2))
    x_T = forward_noise(x0, sched.T, sched, rng).x_t
    out = sample(lambda x_t, t: x0, sched, 3, (8, 2), rng, sigma="zero", clip=False, x_T=x_T)
    np.testing.assert_allclose(out, x0, atol=1e-6)


def test_contraction_toward_fixed_point(sched, rng):
    x0 = rng.uniform(-1, 1, (8, 2))
    x = rng.standard_normal((8, 2)) * 5
    dist = []
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, t, lambda x_t, s: x0, sched, rng, "zero")
        dist.append(np.max(np.abs(x - x0)))
    assert np.all(np.diff(dist) <= 1e-12)
    assert dist[-1] < 1e-9


def test_sample_finite_deterministic_and_clipped():
    s = cosine_schedule(20)
    model = lambda x_t, t: 0.5 * x_t  # noqa: E731
    a = sample(model, s, 4, (6, 2), np.random.default_rng(3))
    b = sample(model, s, 4, (6, 2), np.random.default_rng(3))
    assert a.shape == (4, 6, 2)
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0)


def test_clipping_applies_to_estimate_not_state(sched):
    x = np.full((1, 2), 3.0)
    wild = lambda x_t, t: np.full_like(x_t, 50.0)  # noqa: E731
    clipped = reverse_step(x, 5, wild, sched, np.random.default_rng(0), "zero")
    raw = reverse_step(x, 5, wild, sched, np.random.default_rng(0), "zero", clip_x0=False)
    np.testing.assert_allclose(clipped, posterior_mean(np.ones((1, 2)), x, 5, sched))
    np.testing.assert_allclose(raw, posterior_mean(np.full((1, 2), 50.0), x, 5, sched))
    assert np.all(clipped > 1.0)
