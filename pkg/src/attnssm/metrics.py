"""PSNR and SSIM for images in [0, 1], optionally on the BT.601 luma channel."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .tensor import DimensionError

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    per_image_psnr: list[float] = field(default_factory=list)
    per_image_ssim: list[float] = field(default_factory=list)
    y_channel: bool = True


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in [16/255, 235/255] from RGB in [0, 1] (channels last)."""
    img = np.asarray(img, dtype=np.float64)
    return (16.0 + img[..., 0] * 65.481 + img[..., 1] * 128.553 + img[..., 2] * 24.966) / 255.0


def _prep(pred, target, y_channel: bool, crop: int):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    if y_channel and pred.shape[-1] == 3:
        pred, target = rgb_to_y(pred)[..., None], rgb_to_y(target)[..., None]
    if crop:
        pred = pred[..., crop:-crop, crop:-crop, :]
        target = target[..., crop:-crop, crop:-crop, :]
    return pred, target


def psnr(pred, target, y_channel: bool = True, crop: int = 0) -> float:
    """PSNR with peak 1; identical inputs report ``PSNR_CAP`` dB."""
    p, t = _prep(pred, target, y_channel, crop)
    mse = float(np.mean((p - t) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _ssim_map(a: np.ndarray, b: np.ndarray, k1=0.01, k2=0.03) -> np.ndarray:
    """Per-pixel SSIM over the valid region of an 11x11 gaussian window (single channel)."""
    c1, c2 = k1 ** 2, k2 ** 2
    g = gaussian_window()
    r = len(g) // 2

    def filt(z):
        z = correlate1d(z, g, axis=0, mode="constant")
        z = correlate1d(z, g, axis=1, mode="constant")
        return z[r:-r, r:-r]

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(pred, target, y_channel: bool = True, crop: int = 0) -> float:
    """Mean SSIM (K1=0.01, K2=0.03, 11x11 gaussian sigma 1.5), averaged over channels."""
    p, t = _prep(pred, target, y_channel, crop)
    if p.shape[-3] < 11 or p.shape[-2] < 11:
        raise DimensionError(f"SSIM needs at least 11x11 pixels, got {p.shape}")
    if p.ndim == 3:
        return float(np.mean([_ssim_map(p[..., c], t[..., c]).mean() for c in range(p.shape[-1])]))
    return float(np.mean([ssim(pi, ti, False, 0) for pi, ti in zip(p, t)]))


def evaluate(preds, targets, y_channel: bool = True, crop: int = 0) -> MetricReport:
    ps = [psnr(p, t, y_channel, crop) for p, t in zip(preds, targets)]
    ss = [ssim(p, t, y_channel, crop) for p, t in zip(preds, targets)]
    return MetricReport(float(np.mean(ps)), float(np.mean(ss)), ps, ss, y_channel)
