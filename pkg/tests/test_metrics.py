import numpy as np
import pytest

from kmrvae import metrics as MT
from kmrvae.errors import ShapeError


def _vid(rng, t=2, h=16, w=16):
    return rng.random((3, t, h, w)).astype(np.float32)


# ------------------------------------------------------------------- psnr

def test_psnr_identical_caps_at_100():
    x = _vid(np.random.default_rng(0))
    assert MT.psnr(x, x) == 100.0


def test_psnr_closed_form_20db():
    x = np.zeros((3, 2, 16, 16), np.float32)
    xh = np.full_like(x, 0.1)
    assert abs(MT.psnr(xh, x) - 20.0) < 1e-6


def test_psnr_clamps_reconstruction_first():
    x = np.ones((3, 1, 16, 16), np.float32)
    xh = np.full_like(x, 1.5)
    assert MT.psnr(xh, x) == 100.0


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(1)
    x = _vid(rng) * 0.6 + 0.2
    noise = rng.standard_normal(x.shape).astype(np.float32)
    values = [MT.psnr(x + amp * noise, x) for amp in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_psnr_shape_checks():
    x = _vid(np.random.default_rng(2))
    with pytest.raises(ShapeError):
        MT.psnr(x, x[:, :1])
    with pytest.raises(ShapeError):
        MT.psnr(x[0], x[0])


# ------------------------------------------------------------------- ssim

def _ssim_oracle(a, b):
    """Direct formula, window by window."""
    n, sigma = MT.SSIM_WINDOW, MT.SSIM_SIGMA
    r = np.arange(n) - (n - 1) / 2
    k1d = np.exp(-(r * r) / (2 * sigma * sigma))
    win = np.outer(k1d, k1d)
    win /= win.sum()
    c1, c2 = (0.01) ** 2, (0.03) ** 2
    _, t, h, w = a.shape
    frames = []
    for f in range(t):
        ya = (0.299 * a[0, f] + 0.587 * a[1, f] + 0.114 * a[2, f]).astype(np.float64)
        yb = (0.299 * b[0, f] + 0.587 * b[1, f] + 0.114 * b[2, f]).astype(np.float64)
        vals = []
        for i in range(h - n + 1):
            for j in range(w - n + 1):
                wa = ya[i:i + n, j:j + n]
                wb = yb[i:i + n, j:j + n]
                mu_a = (win * wa).sum()
                mu_b = (win * wb).sum()
                va = (win * wa * wa).sum() - mu_a ** 2
                vb = (win * wb * wb).sum() - mu_b ** 2
                cov = (win * wa * wb).sum() - mu_a * mu_b
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                            / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
        frames.append(np.mean(vals))
    return float(np.mean(frames))


def test_ssim_identical_is_exactly_one():
    x = _vid(np.random.default_rng(3))
    assert MT.ssim(x, x) == 1.0


def test_ssim_matches_direct_formula():
    rng = np.random.default_rng(4)
    a, b = _vid(rng), _vid(rng)
    assert abs(MT.ssim(a, b) - _ssim_oracle(a, b)) < 1e-6
    close = (a + 0.02 * rng.standard_normal(a.shape)).astype(np.float32)
    assert abs(MT.ssim(close, a) - _ssim_oracle(close, a)) < 1e-6


def test_ssim_anticorrelated_binary_is_negative():
    rng = np.random.default_rng(5)
    pattern = (rng.random((16, 16)) > 0.5).astype(np.float32)
    x = np.broadcast_to(pattern, (3, 2, 16, 16)).copy()
    assert MT.ssim(1.0 - x, x) < 0.0


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(6)
    a, b = _vid(rng), _vid(rng)
    assert MT.ssim(a, b) == MT.ssim(b, a)
    for _ in range(5):
        u, v = _vid(rng), _vid(rng)
        s = MT.ssim(u, v)
        assert -1.0 <= s <= 1.0


def test_ssim_window_size_limits():
    x = np.random.default_rng(7).random((3, 1, 11, 11)).astype(np.float32)
    assert MT.ssim(x, x) == 1.0
    small = x[:, :, :10, :]
    with pytest.raises(ShapeError, match="window"):
        MT.ssim(small, small)


# ----------------------------------------------------------- latent stats

def test_latent_stats_identical_samples_zero_trace():
    mu = np.random.default_rng(8).random((4, 1, 2, 2)).astype(np.float32)
    stats = MT.latent_stats({"k": [mu, mu, mu]})
    assert stats["k"]["cov_trace"] == 0.0
    assert abs(stats["k"]["mu_sq"] - float(np.mean(mu.astype(np.float64) ** 2))) < 1e-12


def test_latent_stats_unit_variance_oracle():
    rng = np.random.default_rng(9)
    samples = [rng.standard_normal((8, 2, 2)).astype(np.float32)
               for _ in range(1000)]
    stats = MT.latent_stats({"m": samples})
    assert abs(stats["m"]["cov_trace_per_dim"] - 1.0) < 0.15
    assert abs(stats["m"]["mu_sq"] - 1.0) < 0.15


def test_latent_stats_validates():
    mu = np.zeros((2, 2), np.float32)
    with pytest.raises(ShapeError, match="samples"):
        MT.latent_stats({"k": [mu]})
    with pytest.raises(ShapeError, match="mixed"):
        MT.latent_stats({"k": [mu, np.zeros((3, 2), np.float32)]})
