"""Evaluation battery for (real, synthetic) window datasets of shape ``[M, L, C]``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CORRELATION_SCALE = 0.1
DEFAULT_BINS = 50


class ZeroVarianceError(ValueError):
    pass


class InsufficientWindowsError(ValueError):
    pass


@dataclass
class MetricReport:
    scores: dict[str, float]
    details: dict[str, list] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"scores": self.scores, "details": self.details,
                           "metadata": self.metadata}, indent=2, sort_keys=True)

    def table(self) -> str:
        width = max(len(k) for k in self.scores)
        return "\n".join(f"{k:<{width}}  {v:.6f}" for k, v in self.scores.items())


def _check_pair(real, synth) -> tuple[np.ndarray, np.ndarray]:
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.ndim != 3 or synth.ndim != 3:
        raise ValueError("datasets must be [M, L, C]")
    if real.shape[1:] != synth.shape[1:]:
        raise ValueError(f"(L, C) differ: {real.shape[1:]} vs {synth.shape[1:]}")
    if real.shape[0] == 0 or synth.shape[0] == 0:
        raise ValueError("empty dataset")
    return real, synth


def _require_variance(x: np.ndarray, names=None) -> None:
    flat = x.reshape(-1, x.shape[-1])
    sd = flat.std(axis=0)
    for c in np.flatnonzero(sd <= 0):
        label = names[c] if names is not None else int(c)
        raise ZeroVarianceError(f"channel {label!r} has zero variance")


# ---------------------------------------------------------------------------
# correlation


def window_correlations(x: np.ndarray) -> np.ndarray:
    """Per-window Pearson matrices ``[M, C, C]`` from cov = E[x_i x_j] - E[x_i]E[x_j].

    Entries touching a constant window channel are 0 (diagonal stays 1).
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=1)
    cov = np.einsum("mti,mtj->mij", x, x) / x.shape[1] - mean[:, :, None] * mean[:, None, :]
    var = np.clip(np.diagonal(cov, axis1=1, axis2=2), 0.0, None)
    sd = np.sqrt(var)
    denom = sd[:, :, None] * sd[:, None, :]
    ok = denom > 1e-12
    corr = np.where(ok, cov / np.where(ok, denom, 1.0), 0.0)
    idx = np.arange(x.shape[2])
    corr[:, idx, idx] = 1.0
    return corr


def correlational_score(real, synth, names=None) -> float:
    """0.1 * sum_{i<j} |mean corr_real - mean corr_synth|."""
    real, synth = _check_pair(real, synth)
    _require_variance(real, names)
    _require_variance(synth, names)
    cr = window_correlations(real).mean(axis=0)
    cs = window_correlations(synth).mean(axis=0)
    i, j = np.triu_indices(real.shape[2], k=1)
    return float(CORRELATION_SCALE * np.sum(np.abs(cr[i, j] - cs[i, j])))


# ---------------------------------------------------------------------------
# histograms


def _edges(lo: np.ndarray, hi: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=np.float64).copy()
    hi = np.asarray(hi, dtype=np.float64).copy()
    flat = hi <= lo
    lo[flat] -= 0.5
    hi[flat] += 0.5
    return lo, (hi - lo) / bins


def _histograms(values: np.ndarray, lo: np.ndarray, width: np.ndarray, bins: int) -> np.ndarray:
    """Probability histograms per column of ``values [n, G]``; outside values go to edge bins."""
    n, groups = values.shape
    idx = np.floor((values - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    flat = (np.arange(groups)[None, :] * bins + idx).ravel()
    counts = np.bincount(flat, minlength=groups * bins).reshape(groups, bins)
    return counts / n


def mean_abs_bin_difference(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(np.asarray(p) - np.asarray(q)), axis=-1)


def mdd(real, synth, bins: int = DEFAULT_BINS) -> float:
    """Marginal distribution difference, binned on the real data's range per (time, channel)."""
    real, synth = _check_pair(real, synth)
    L, C = real.shape[1:]
    r = real.reshape(real.shape[0], L * C)
    s = synth.reshape(synth.shape[0], L * C)
    lo, width = _edges(r.min(axis=0), r.max(axis=0), bins)
    p = _histograms(r, lo, width, bins)
    q = _histograms(s, lo, width, bins)
    return float(np.mean(mean_abs_bin_difference(p, q)))


def js_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jensen-Shannon divergence (natural log) along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return np.sum(np.where(mask, a * np.log(np.where(mask, a, 1.0) / np.where(mask, b, 1.0)), 0.0),
                      axis=-1)

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    """KL(p || q) with additive smoothing so empty bins stay finite."""
    p = np.asarray(p, dtype=np.float64) + eps
    q = np.asarray(q, dtype=np.float64) + eps
    p = p / p.sum(axis=-1, keepdims=True)
    q = q / q.sum(axis=-1, keepdims=True)
    return np.sum(p * np.log(p / q), axis=-1)


def _distance(name: str):
    if name == "js":
        return js_divergence
    if name == "kl":
        return kl_divergence
    raise ValueError(f"unknown distance {name!r} (expected 'js' or 'kl')")


def vds(real, synth, distance: str = "js", bins: int = DEFAULT_BINS) -> float:
    """Mean over channels of D(value histogram real, value histogram synthetic).

    Both histograms share bins spanning the union of the two value ranges.
    """
    real, synth = _check_pair(real, synth)
    C = real.shape[2]
    r = real.reshape(-1, C)
    s = synth.reshape(-1, C)
    lo, width = _edges(np.minimum(r.min(0), s.min(0)), np.maximum(r.max(0), s.max(0)), bins)
    p = _histograms(r, lo, width, bins)
    q = _histograms(s, lo, width, bins)
    return float(np.mean(_distance(distance)(p, q)))


def pair_correlation_samples(x: np.ndarray) -> np.ndarray:
    """Per-window cross-correlation of each channel pair i < j: ``[M, P]``."""
    corr = window_correlations(x)
    i, j = np.triu_indices(x.shape[2], k=1)
    return corr[:, i, j]


def fdds(real, synth, distance: str = "js", bins: int = DEFAULT_BINS) -> float:
    """Mean over channel pairs of D between per-window correlation histograms on [-1, 1]."""
    real, synth = _check_pair(real, synth)
    if real.shape[0] < 2 or synth.shape[0] < 2:
        raise InsufficientWindowsError("FDDS needs at least two windows per dataset")
    if real.shape[2] < 2:
        raise ValueError("FDDS needs at least two channels")
    pr = pair_correlation_samples(real)
    ps = pair_correlation_samples(synth)
    P = pr.shape[1]
    lo = np.full(P, -1.0)
    width = np.full(P, 2.0 / bins)
    p = _histograms(pr, lo, width, bins)
    q = _histograms(ps, lo, width, bins)
    return float(np.mean(_distance(distance)(p, q)))


# ---------------------------------------------------------------------------
# temporal and moment statistics


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Window-averaged ACF per channel, ``[C, max_lag + 1]``.

    r_tau = sum_t (x_t - m)(x_{t+tau} - m) / sum_t (x_t - m)^2 within each
    window; constant windows contribute 0 at every lag >= 1.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[1]
    if not 1 <= max_lag < L:
        raise ValueError(f"max_lag must satisfy 1 <= max_lag < L={L}")
    xc = x - x.mean(axis=1, keepdims=True)
    denom = np.sum(xc * xc, axis=1)
    ok = denom > 1e-12
    acf = np.empty((x.shape[0], x.shape[2], max_lag + 1))
    for lag in range(max_lag + 1):
        num = np.sum(xc[:, : L - lag] * xc[:, lag:], axis=1)
        acf[:, :, lag] = np.where(ok, num / np.where(ok, denom, 1.0), 0.0)
    acf[:, :, 0] = 1.0
    return acf.mean(axis=0)


def acd(real, synth, max_lag: int | None = None, names=None) -> float:
    """Mean |ACF_real - ACF_synth| over channels and lags 1..max_lag (default L // 4)."""
    real, synth = _check_pair(real, synth)
    _require_variance(real, names)
    _require_variance(synth, names)
    if max_lag is None:
        max_lag = max(1, real.shape[1] // 4)
    ar = autocorrelation(real, max_lag)[:, 1:]
    as_ = autocorrelation(synth, max_lag)[:, 1:]
    return float(np.mean(np.abs(ar - as_)))


def _standardised_moment(x: np.ndarray, order: int, names=None) -> np.ndarray:
    flat = x.reshape(-1, x.shape[-1])
    mu = flat.mean(axis=0)
    sd = flat.std(axis=0)
    for c in np.flatnonzero(sd <= 0):
        label = names[c] if names is not None else int(c)
        raise ZeroVarianceError(f"channel {label!r} has zero standard deviation")
    return np.mean((flat - mu) ** order, axis=0) / sd ** order


def skewness(x: np.ndarray) -> np.ndarray:
    return _standardised_moment(np.asarray(x, dtype=np.float64), 3)


def kurtosis(x: np.ndarray) -> np.ndarray:
    """Non-excess kurtosis per channel (3 for a Gaussian)."""
    return _standardised_moment(np.asarray(x, dtype=np.float64), 4)


def skewness_diff(real, synth, names=None) -> float:
    real, synth = _check_pair(real, synth)
    return float(np.mean(np.abs(_standardised_moment(real, 3, names)
                                - _standardised_moment(synth, 3, names))))


def kurtosis_diff(real, synth, names=None) -> float:
    real, synth = _check_pair(real, synth)
    return float(np.mean(np.abs(_standardised_moment(real, 4, names)
                                - _standardised_moment(synth, 4, names))))


# ---------------------------------------------------------------------------


def evaluate(real, synth, bins: int = DEFAULT_BINS, max_lag: int | None = None,
             distance: str = "js", names=None, seed: int | None = None) -> MetricReport:
    """Run every metric and collect them in a :class:`MetricReport`."""
    real, synth = _check_pair(real, synth)
    L, C = real.shape[1:]
    if max_lag is None:
        max_lag = max(1, L // 4)
    scores = {
        "correlational": correlational_score(real, synth, names),
        "mdd": mdd(real, synth, bins),
        "acd": acd(real, synth, max_lag, names),
        "sd": skewness_diff(real, synth, names),
        "kd": kurtosis_diff(real, synth, names),
        "vds": vds(real, synth, distance, bins),
    }
    if C >= 2 and real.shape[0] >= 2 and synth.shape[0] >= 2:
        scores["fdds"] = fdds(real, synth, distance, bins)
    details = {
        "skewness_real": skewness(real).tolist(),
        "skewness_synthetic": skewness(synth).tolist(),
        "kurtosis_real": kurtosis(real).tolist(),
        "kurtosis_synthetic": kurtosis(synth).tolist(),
        "acf_real": autocorrelation(real, max_lag).tolist(),
        "acf_synthetic": autocorrelation(synth, max_lag).tolist(),
    }
    metadata = {
        "real_windows": int(real.shape[0]), "synthetic_windows": int(synth.shape[0]),
        "length": int(L), "channels": int(C), "bins": int(bins), "max_lag": int(max_lag),
        "distance": distance, "seed": seed,
        "correlational_scale": CORRELATION_SCALE,
        "channel_names": list(names) if names is not None else None,
    }
    return MetricReport(scores, details, metadata)
