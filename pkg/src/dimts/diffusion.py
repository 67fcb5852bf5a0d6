"""DDPM machinery with a cosine noise schedule and x0-prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass
class DiffusionSchedule:
    """Tables indexed by step t = 0..T; index 0 is the clean boundary (alpha_bar = 1)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_step(self, t) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ValueError(f"diffusion step {t} outside [1, {self.T}]")

    def posterior_variance(self, t):
        return (1.0 - self.alpha_bar[np.asarray(t) - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]


def cosine_schedule(T: int, s: float = COSINE_OFFSET, max_beta: float = MAX_BETA) -> DiffusionSchedule:
    """alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2); betas clipped at ``max_beta``.

    The stored alpha_bar is the running product of the clipped alphas, so it is
    self-consistent with ``beta`` to rounding.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    ab = f / f[0]
    beta = np.zeros(T + 1)
    beta[1:] = np.minimum(1.0 - ab[1:] / ab[:-1], max_beta)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(T, beta, alpha, alpha_bar)


@dataclass
class NoisedSample:
    x_t: np.ndarray
    t: object
    eps: np.ndarray


def _per_sample(coef, ndim: int):
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def forward_noise(x0: np.ndarray, t, schedule: DiffusionSchedule,
                  rng: np.random.Generator, eps: np.ndarray | None = None) -> NoisedSample:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` may be a scalar or one step per leading sample.
    """
    schedule.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    ab = _per_sample(schedule.alpha_bar[t], x0.ndim)
    return NoisedSample(np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, t, eps)


def posterior_coefficients(t, schedule: DiffusionSchedule):
    """Coefficients of x0 and x_t in the posterior mean of q(x^{t-1} | x^t, x^0)."""
    t = np.asarray(t)
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    c0 = np.sqrt(ab_prev) * schedule.beta[t] / (1.0 - ab_t)
    ct = np.sqrt(schedule.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab_t)
    return c0, ct


def posterior_mean(x0, x_t, t, schedule: DiffusionSchedule) -> np.ndarray:
    schedule.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    c0, ct = posterior_coefficients(t, schedule)
    nd = x0.ndim
    return _per_sample(c0, nd) * x0 + _per_sample(ct, nd) * np.asarray(x_t, dtype=np.float64)


def reverse_sigma(t: int, schedule: DiffusionSchedule, mode: str = "beta") -> float:
    """Noise scale of the reverse step.

    ``beta``: sigma^2 = beta_t; ``posterior``: sigma^2 = the posterior variance;
    ``zero``: deterministic.  No noise is added at t = 1 in any mode.
    """
    if t <= 1 or mode == "zero":
        return 0.0
    if mode == "beta":
        return float(np.sqrt(schedule.beta[t]))
    if mode == "posterior":
        return float(np.sqrt(schedule.posterior_variance(t)))
    raise ValueError(f"unknown sigma mode {mode!r}")


Denoiser = Callable[[np.ndarray, int], np.ndarray]


def reverse_step(x_t: np.ndarray, t: int, model: Denoiser, schedule: DiffusionSchedule,
                 rng: np.random.Generator, sigma: str = "beta", clip_x0: bool = True) -> np.ndarray:
    """One ancestral step: posterior mean at the predicted x0 plus sigma_t z.

    With ``clip_x0`` the x0 estimate (not the chain state) is clipped to the
    data range [-1, 1] before it enters the posterior mean.
    """
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(model(x_t, t), dtype=np.float64)
    if x0_hat.shape != x_t.shape:
        raise ValueError(f"model returned shape {x0_hat.shape}, expected {x_t.shape}")
    if clip_x0:
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
    mean = posterior_mean(x0_hat, x_t, t, schedule)
    s = reverse_sigma(t, schedule, sigma)
    if s == 0.0:
        return mean
    return mean + s * rng.standard_normal(x_t.shape)


def sample(model: Denoiser, schedule: DiffusionSchedule, n: int, shape: tuple[int, int],
           rng: np.random.Generator, sigma: str = "beta", clip: bool = True,
           x_T: np.ndarray | None = None, clip_x0: bool = True) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I) for ``n`` windows of ``shape`` = (L, C).

    Chains run as one batch sharing ``rng``.  The chain state is clipped to
    [-1, 1] only at the end; ``clip_x0`` bounds each step's x0 estimate.
    """
    x = rng.standard_normal((n,) + tuple(shape)) if x_T is None else np.array(x_T, dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        x = reverse_step(x, t, model, schedule, rng, sigma, clip_x0)
    return np.clip(x, -1.0, 1.0) if clip else x
