import numpy as np
import pytest
from scipy.stats import kurtosis as sp_kurtosis, skew as sp_skew

from dimts import metrics as mt
from dimts.metrics import (CORRELATION_SCALE, InsufficientWindowsError, ZeroVarianceError, acd,
                           autocorrelation, correlational_score, evaluate, fdds, js_divergence, mdd,
                           kurtosis_diff, skewness_diff, vds)

ALL = ("correlational", "mdd", "acd", "sd", "kd", "vds", "fdds")


def js_by_hand(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    kl = lambda a, b: sum(x * np.log(x / y) for x, y in zip(a, b) if x > 0)  # noqa: E731
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


@pytest.mark.parametrize("distance", ["js", "kl"])
def test_identity_all_metrics(distance, rng):
    real = rng.standard_normal((20, 16, 4))
    report = evaluate(real, real.copy(), distance=distance)
    assert set(report.scores) == set(ALL)
    for name in ALL:
        assert abs(report.scores[name]) <= 1e-12, name


def test_window_order_invariance(rng):
    real = rng.standard_normal((12, 10, 3))
    synth = rng.standard_normal((9, 10, 3)) * 1.3
    a = evaluate(real, synth).scores
    b = evaluate(real[rng.permutation(12)], synth[rng.permutation(9)]).scores
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12)


def test_scores_finite_nonnegative(rng):
    for _ in range(10):
        real = rng.standard_normal((6, 8, 3))
        synth = rng.uniform(-2, 2, (5, 8, 3))
        for v in evaluate(real, synth, bins=10).scores.values():
            assert np.isfinite(v) and v >= 0


def test_report_roundtrip(rng):
    real = rng.standard_normal((5, 8, 2))
    rep = evaluate(real, real + 0.1, names=["a", "b"], seed=3)
    import json
    data = json.loads(rep.to_json())
    assert data["metadata"]["seed"] == 3 and data["metadata"]["bins"] == 50
    assert "acd" in rep.table()


# correlational score


def test_correlational_matches_pearson_oracle(rng):
    for _ in range(5):
        real = rng.standard_normal((7, 15, 2))
        synth = rng.standard_normal((4, 15, 2))
        mr = np.mean([np.corrcoef(w.T)[0, 1] for w in real])
        ms = np.mean([np.corrcoef(w.T)[0, 1] for w in synth])
        assert correlational_score(real, synth) == pytest.approx(CORRELATION_SCALE * abs(mr - ms),
                                                                 abs=1e-12)


def test_correlational_single_channel_and_zero_variance(rng):
    assert correlational_score(rng.standard_normal((3, 5, 1)), rng.standard_normal((3, 5, 1))) == 0.0
    real = rng.standard_normal((3, 5, 2))
    real[:, :, 1] = 2.0
    with pytest.raises(ZeroVarianceError, match="'b'"):
        correlational_score(real, rng.standard_normal((3, 5, 2)), names=["a", "b"])


# MDD


def test_mdd_hand_built_two_bins():
    real = np.zeros((1, 1, 1))           # flat range widens to [-0.5, 0.5]; 0 falls in bin 1
    synth = np.full((1, 1, 1), -0.4)     # bin 0
    assert mdd(real, synth, bins=2) == pytest.approx(1.0)


def test_mdd_real_anchored(rng):
    real = rng.uniform(0, 1, (30, 4, 2))
    far = real + 10.0                    # every synthetic value lands in the top edge bin
    p = np.array([np.histogram(real[:, t, c], bins=5, range=(real[:, t, c].min(), real[:, t, c].max()))[0]
                  for t in range(4) for c in range(2)]) / 30
    q = np.zeros_like(p)
    q[:, -1] = 1.0
    assert mdd(real, far, bins=5) == pytest.approx(np.mean(np.abs(p - q)), abs=1e-12)


# ACD


def test_acf_lag_zero_and_white_noise(rng):
    x = rng.standard_normal((50, 64, 2))
    acf = autocorrelation(x, 8)
    np.testing.assert_array_equal(acf[:, 0], 1.0)
    assert np.all(np.abs(acf[:, 1:]) < 0.1)


def test_acd_sine_vs_noise(rng):
    L, period = 256, 16
    t = np.arange(L)
    sine = np.stack([np.sin(2 * np.pi * (t + s) / period) for s in range(20)])[:, :, None]
    noise = rng.standard_normal((20, L, 1))
    diff = autocorrelation(sine, period)[0, period] - autocorrelation(noise, period)[0, period]
    assert diff == pytest.approx(1.0, abs=0.1)
    assert acd(sine, sine) == 0.0
    with pytest.raises(ValueError):
        autocorrelation(sine, L)


def test_acd_matches_direct_oracle(rng):
    real = rng.standard_normal((4, 12, 2))
    synth = rng.standard_normal((3, 12, 2))

    def acf(ds, c, lag):
        vals = []
        for w in ds[:, :, c]:
            d = w - w.mean()
            vals.append(np.dot(d[:-lag], d[lag:]) / np.dot(d, d))
        return np.mean(vals)

    want = np.mean([abs(acf(real, c, k) - acf(synth, c, k)) for c in range(2) for k in range(1, 4)])
    assert acd(real, synth) == pytest.approx(want, abs=1e-12)


# moments


def test_skew_kurtosis_against_scipy(rng):
    real = rng.gamma(2.0, size=(10, 30, 2))
    synth = rng.standard_normal((8, 30, 2))
    fr, fs = real.reshape(-1, 2), synth.reshape(-1, 2)
    sd = np.mean(np.abs(sp_skew(fr, axis=0) - sp_skew(fs, axis=0)))
    kd = np.mean(np.abs(sp_kurtosis(fr, axis=0, fisher=False) - sp_kurtosis(fs, axis=0, fisher=False)))
    assert skewness_diff(real, synth) == pytest.approx(sd, abs=1e-12)
    assert kurtosis_diff(real, synth) == pytest.approx(kd, abs=1e-12)


def test_mirror_image(rng):
    x = rng.exponential(size=(10, 20, 2))
    mirror = 2 * x.mean() - x
    sk = mt.skewness(x)
    assert skewness_diff(x, mirror) == pytest.approx(np.mean(2 * np.abs(sk)), rel=1e-10)
    assert kurtosis_diff(x, mirror) == pytest.approx(0.0, abs=1e-10)


def test_uniform_vs_normal_kurtosis():
    rng = np.random.default_rng(5)
    u = rng.uniform(-1, 1, (1, 10_000, 1))
    n = rng.standard_normal((1, 10_000, 1))
    assert kurtosis_diff(u, n) == pytest.approx(1.2, abs=0.2)


def test_moment_zero_sigma(rng):
    with pytest.raises(ZeroVarianceError):
        skewness_diff(np.ones((2, 3, 1)), rng.standard_normal((2, 3, 1)))


# VDS / FDDS


def test_js_hand_built_three_bins():
    p, q = [0.5, 0.5, 0.0], [0.0, 0.25, 0.75]
    assert js_divergence(np.array(p), np.array(q)) == pytest.approx(js_by_hand(p, q), abs=1e-15)


def test_vds_three_bin_histograms():
    real = np.array([0.1, 0.2, 1.5, 2.9]).reshape(1, 4, 1)
    synth = np.array([1.1, 2.5, 2.6, 2.8]).reshape(1, 4, 1)
    # union range [0.1, 2.9], bins of width 0.9333
    p, q = [0.5, 0.25, 0.25], [0.0, 0.25, 0.75]
    assert vds(real, synth, bins=3) == pytest.approx(js_by_hand(p, q), abs=1e-14)


def test_vds_disjoint_support(rng):
    real = rng.uniform(0, 1, (5, 8, 3))
    assert vds(real, real + 5.0) == pytest.approx(np.log(2), abs=1e-12)


def test_vds_symmetric_and_kl_option(rng):
    a, b = rng.standard_normal((6, 8, 2)), rng.standard_normal((4, 8, 2)) + 0.5
    assert vds(a, b) == pytest.approx(vds(b, a), abs=1e-14)
    assert np.isfinite(vds(a, a + 100, distance="kl"))
    with pytest.raises(ValueError):
        vds(a, b, distance="wasserstein")


def test_fdds_decomposed_oracle(rng):
    real = rng.standard_normal((8, 10, 3))
    synth = rng.standard_normal((8, 10, 3))
    bins = 50
    vals = []
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        cr = [np.corrcoef(w[:, i], w[:, j])[0, 1] for w in real]
        cs = [np.corrcoef(w[:, i], w[:, j])[0, 1] for w in synth]
        hp = np.histogram(cr, bins=bins, range=(-1, 1))[0] / 8
        hq = np.histogram(cs, bins=bins, range=(-1, 1))[0] / 8
        vals.append(js_by_hand(hp, hq))
    assert fdds(real, synth, bins=bins) == pytest.approx(np.mean(vals), abs=1e-12)
    assert fdds(real, synth) == pytest.approx(fdds(synth, real), abs=1e-14)


def test_fdds_two_channels_and_errors(rng):
    real = rng.standard_normal((6, 10, 2))
    synth = rng.standard_normal((6, 10, 2))
    cr = [np.corrcoef(w.T)[0, 1] for w in real]
    cs = [np.corrcoef(w.T)[0, 1] for w in synth]
    hp = np.histogram(cr, bins=10, range=(-1, 1))[0] / 6
    hq = np.histogram(cs, bins=10, range=(-1, 1))[0] / 6
    assert fdds(real, synth, bins=10) == pytest.approx(js_by_hand(hp, hq), abs=1e-12)
    with pytest.raises(InsufficientWindowsError):
        fdds(real[:1], synth)
    with pytest.raises(ValueError):
        fdds(real[:, :, :1], synth[:, :, :1])


def test_pair_shape_errors(rng):
    with pytest.raises(ValueError):
        evaluate(rng.standard_normal((3, 8, 2)), rng.standard_normal((3, 7, 2)))
