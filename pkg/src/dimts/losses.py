"""Training objective: reconstruction, Fourier-domain and correlation-MMD terms.

All functions take the clean windows ``x0`` (array) and the model output
``x_out`` (array or autodiff node) laid out ``[..., L, C]`` and return scalar
nodes differentiable in ``x_out``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, as_node, value_of
from .fft import dft_node

MIN_BANDWIDTH = 0.05
DEGENERATE_VAR = 1e-12


@dataclass
class LossWeights:
    fourier: float = 0.01
    correlation: float = 0.01

    def __post_init__(self):
        for name in ("fourier", "correlation"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def _check_shapes(x0, x_out) -> None:
    s0, s1 = value_of(x0).shape, value_of(x_out).shape
    if s0 != s1:
        raise ad.ShapeError(f"shape mismatch: {s0} vs {s1}")


def ddpm_loss(x0, x_out) -> Node:
    """Mean squared error over all elements."""
    _check_shapes(x0, x_out)
    return ad.mean(ad.square(ad.sub(x0, x_out)))


def fourier_loss(x0, x_out) -> Node:
    """||FFT(x0) - FFT(x_out)||^2 along time, summed over frequencies, averaged over channels.

    The full complex difference is used (real and imaginary parts jointly).
    """
    _check_shapes(x0, x_out)
    re, im = dft_node(ad.sub(x_out, x0), axis=-2)
    power = ad.sum(ad.add(ad.square(re), ad.square(im)), axis=-2)
    return ad.mean(power)


def channel_pairs(C: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(C, k=1)
    return i, j


def pairwise_correlations(x) -> tuple[Node, np.ndarray]:
    """Per-window Pearson correlation of every channel pair (i < j).

    ``x`` is ``[B, L, C]``; returns ``(corr [B, P], degenerate [B, P])`` where
    pairs touching a zero-variance window channel are set to 0 and flagged.
    """
    x = as_node(x)
    if x.shape[-2] < 2:
        raise ValueError("correlation needs at least two time steps")
    i, j = channel_pairs(x.shape[-1])
    xc = ad.sub(x, ad.mean(x, axis=-2, keepdims=True))
    xi = ad.take(xc, i, axis=-1)
    xj = ad.take(xc, j, axis=-1)
    num = ad.sum(ad.mul(xi, xj), axis=-2)
    ssi = ad.sum(ad.square(xi), axis=-2)
    ssj = ad.sum(ad.square(xj), axis=-2)
    ok = (ssi.value > DEGENERATE_VAR) & (ssj.value > DEGENERATE_VAR)
    mask = ok.astype(np.float64)
    den = ad.sqrt(ad.add(ad.mul(ssi, ssj), 1.0 - mask))
    return ad.div(ad.mul(num, mask), den), ~ok


def rbf_kernel(a, b, bandwidth: float) -> Node:
    """k(a, b) = exp(-(a - b)^2 / (2 sigma^2)) for all pairs along the last axis."""
    a, b = as_node(a), as_node(b)
    diff = ad.sub(ad.reshape(a, a.shape + (1,)), ad.reshape(b, b.shape[:-1] + (1, b.shape[-1])))
    return ad.exp(ad.mul(ad.square(diff), -0.5 / bandwidth ** 2))


def mmd(X, Y, bandwidth: float) -> Node:
    """Biased squared MMD with a Gaussian RBF kernel.

    Sample sets lie along the last axis; leading axes are batched.
    """
    if value_of(X).shape[-1] == 0 or value_of(Y).shape[-1] == 0:
        raise ValueError("MMD needs non-empty sample sets")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    kxx = ad.mean(rbf_kernel(X, X, bandwidth), axis=(-2, -1))
    kyy = ad.mean(rbf_kernel(Y, Y, bandwidth), axis=(-2, -1))
    kxy = ad.mean(rbf_kernel(X, Y, bandwidth), axis=(-2, -1))
    return ad.sub(ad.add(kxx, kyy), ad.mul(kxy, 2.0))


def median_bandwidth(samples: np.ndarray, floor: float = MIN_BANDWIDTH) -> float:
    """Median pairwise distance within each row of ``samples [P, B]``, pooled; floored."""
    samples = np.asarray(samples)
    diffs = np.abs(samples[..., :, None] - samples[..., None, :])
    iu = np.triu_indices(samples.shape[-1], k=1)
    d = diffs[..., iu[0], iu[1]].ravel()
    med = float(np.median(d)) if d.size else 0.0
    return max(med, floor)


def correlation_shift_loss(x0, x_out, bandwidth: float | None = None) -> Node:
    """Mean over channel pairs of MMD between per-window correlation distributions.

    Both batches must come from the same diffusion step.  The default bandwidth
    is the median heuristic on the clean-data correlations.
    """
    _check_shapes(x0, x_out)
    if value_of(x0).ndim != 3 or value_of(x0).shape[0] < 2:
        raise ValueError("correlation shift loss needs a batch [B >= 2, L, C]")
    if value_of(x0).shape[-1] < 2:
        return as_node(0.0)
    r0, _ = pairwise_correlations(value_of(x0))
    r1, _ = pairwise_correlations(x_out)
    real = r0.value.T
    fake = ad.transpose(r1, (1, 0))
    if bandwidth is None:
        bandwidth = median_bandwidth(real)
    return ad.mean(mmd(real, fake, bandwidth))


def total_loss(x0, x_out, weights: LossWeights | None = None,
               bandwidth: float | None = None) -> tuple[Node, dict[str, float]]:
    """L_DDPM + lambda_1 L_T + lambda_2 L_C; also returns each component as a float."""
    weights = weights or LossWeights()
    l_ddpm = ddpm_loss(x0, x_out)
    total = l_ddpm
    parts = {"ddpm": float(l_ddpm.value)}
    l_t = fourier_loss(x0, x_out)
    parts["fourier"] = float(l_t.value)
    if weights.fourier:
        total = ad.add(total, ad.mul(l_t, weights.fourier))
    if value_of(x0).ndim == 3 and value_of(x0).shape[0] >= 2:
        l_c = correlation_shift_loss(x0, x_out, bandwidth)
        parts["correlation"] = float(value_of(l_c))
        if weights.correlation:
            total = ad.add(total, ad.mul(l_c, weights.correlation))
    else:
        parts["correlation"] = 0.0
    parts["total"] = float(total.value)
    return total, parts
