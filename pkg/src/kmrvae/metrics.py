"""Reconstruction quality numbers: PSNR, per-frame grayscale SSIM, and
latent compactness statistics. Everything here is plain numpy on
detached arrays; nothing is differentiated through."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _as_video(x, name):
    arr = np.asarray(getattr(x, "data", x))
    if arr.ndim != 4 or arr.shape[0] != 3:
        raise ShapeError(f"{name} must be [3,T,H,W], got {arr.shape}")
    return arr


def psnr(x_hat, x) -> float:
    """10*log10(1/MSE) after clamping the reconstruction to [0,1];
    identical inputs cap at 100 dB."""
    a = _as_video(x_hat, "x_hat")
    b = _as_video(x, "x")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    a = np.clip(a.astype(np.float64), 0.0, 1.0)
    mse = float(np.mean((a - b.astype(np.float64)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _gauss(n: int, sigma: float) -> np.ndarray:
    r = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _win_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with an odd kernel."""
    n = kernel.size
    h, w = img.shape
    tmp = np.zeros((h, w - n + 1), np.float64)
    for i in range(n):
        tmp += kernel[i] * img[:, i:i + w - n + 1]
    out = np.zeros((h - n + 1, w - n + 1), np.float64)
    for i in range(n):
        out += kernel[i] * tmp[i:i + h - n + 1, :]
    return out


def _luma(frame: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(LUMA_WEIGHTS, np.float64),
                        frame.astype(np.float64), axes=(0, 0))


def ssim(x_hat, x) -> float:
    """Mean over frames of grayscale SSIM with an 11-tap Gaussian window
    (sigma 1.5), window fully inside the image."""
    a = _as_video(x_hat, "x_hat")
    b = _as_video(x, "x")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    _, t, h, w = a.shape
    if min(h, w) < SSIM_WINDOW:
        raise ShapeError(
            f"frames {h}x{w} smaller than the {SSIM_WINDOW}-tap window")
    kernel = _gauss(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    vals = []
    for i in range(t):
        ya, yb = _luma(a[:, i]), _luma(b[:, i])
        mu_a = _win_mean(ya, kernel)
        mu_b = _win_mean(yb, kernel)
        var_a = _win_mean(ya * ya, kernel) - mu_a * mu_a
        var_b = _win_mean(yb * yb, kernel) - mu_b * mu_b
        cov = _win_mean(ya * yb, kernel) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def latent_stats(mus) -> dict:
    """Compactness summary per component over a batch of mu grids:
    mean squared coefficient, and the trace of the covariance of the
    flattened mu across samples (plus that trace per dimension).

    mus: component name -> sequence of >=2 equally shaped arrays."""
    out = {}
    for comp, samples in mus.items():
        mats = [np.asarray(getattr(s, "data", s), np.float64).reshape(-1)
                for s in samples]
        if len(mats) < 2:
            raise ShapeError(
                f"component {comp!r} needs >=2 samples, got {len(mats)}")
        if len({m.size for m in mats}) != 1:
            raise ShapeError(f"component {comp!r} has mixed latent sizes")
        stack = np.stack(mats)
        trace = float(stack.var(axis=0, ddof=1).sum())
        out[comp] = {
            "mu_sq": float(np.mean(stack * stack)),
            "cov_trace": trace,
            "cov_trace_per_dim": trace / stack.shape[1],
        }
    return out
