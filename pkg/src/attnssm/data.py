"""Synthetic restoration pairs, bicubic resampling and flip/rotate augmentation."""
from __future__ import annotations

import numpy as np

from .tensor import ConfigError, RngState

KINDS = ("checkerboards", "gradients", "gaussian-textures", "tiny-natural")


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax ** 2, ax ** 3
    return np.where(ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1,
                    np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense ``(n_out, n_in)`` bicubic resampling matrix.

    Downscaling widens the kernel by ``1/scale`` (antialiasing); borders are
    mirrored; every row sums to one.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    width = 4.0 / stretch
    M = np.zeros((n_out, n_in))
    for i in range(n_out):
        u = (i + 0.5) / scale - 0.5
        left = int(np.floor(u - width / 2))
        taps = np.arange(left, left + int(np.ceil(width)) + 2)
        w = stretch * cubic_kernel(stretch * (u - taps))
        # symmetric border: -1 -> 0, n -> n-1
        idx = np.where(taps < 0, -taps - 1, taps)
        idx = np.where(idx >= n_in, 2 * n_in - idx - 1, idx)
        idx = np.clip(idx, 0, n_in - 1)
        np.add.at(M[i], idx, w)
    return M / M.sum(axis=1, keepdims=True)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize ``(..., H, W, C)`` images."""
    H, W = img.shape[-3], img.shape[-2]
    Mh, Mw = resize_matrix(H, out_h), resize_matrix(W, out_w)
    out = np.einsum("oh,...hwc->...owc", Mh, img)
    return np.einsum("pw,...owc->...opc", Mw, out)


def bicubic_down(img: np.ndarray, scale: int) -> np.ndarray:
    H, W = img.shape[-3], img.shape[-2]
    return bicubic_resize(img, H // scale, W // scale)


def bicubic_up(img: np.ndarray, scale: int) -> np.ndarray:
    H, W = img.shape[-3], img.shape[-2]
    return bicubic_resize(img, H * scale, W * scale)


# ---------------------------------------------------------------------------
# generators: each returns an (n, n, 3) float image in [0, 1]


def _colors(rng, k):
    return rng.uniform(0.05, 0.95, (k, 3))


def checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    cell = rng.uniform(2.0, 8.0)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    u = (np.cos(theta) * xx + np.sin(theta) * yy) / cell + rng.uniform(0, 2)
    v = (-np.sin(theta) * xx + np.cos(theta) * yy) / cell + rng.uniform(0, 2)
    mask = (np.floor(u) + np.floor(v)) % 2
    c = _colors(rng, 2)
    return c[0] * (1 - mask[..., None]) + c[1] * mask[..., None]


def gradient(n: int, rng: np.random.Generator) -> np.ndarray:
    """Two shaded ramps meeting along a straight edge, rendered 4x and box-filtered."""
    s = 4
    m = n * s
    yy, xx = (np.mgrid[0:m, 0:m] + 0.5) / m
    theta = rng.uniform(0, 2 * np.pi)
    side = np.cos(theta) * (xx - rng.uniform(0.25, 0.75)) + np.sin(theta) * (yy - rng.uniform(0.25, 0.75))
    img = np.empty((m, m, 3))
    for region in (side < 0, side >= 0):
        c = _colors(rng, 2)
        phi = rng.uniform(0, 2 * np.pi)
        t = np.cos(phi) * xx + np.sin(phi) * yy
        t = (t - t.min()) / max(np.ptp(t), 1e-12)
        img[region] = (c[0] + (c[1] - c[0]) * t[..., None])[region]
    return img.reshape(n, s, n, s, 3).mean(axis=(1, 3))


def gaussian_texture(n: int, rng: np.random.Generator) -> np.ndarray:
    from scipy.ndimage import gaussian_filter
    sigma = rng.uniform(0.7, 2.5)
    base = gaussian_filter(rng.standard_normal((n, n)), sigma, mode="wrap")
    chroma = gaussian_filter(rng.standard_normal((n, n, 3)), (sigma * 2, sigma * 2, 0), mode="wrap")
    img = base[..., None] + 0.3 * chroma
    img = (img - img.mean()) / (img.std() + 1e-12)
    return np.clip(0.5 + 0.18 * img * rng.uniform(0.5, 1.2) + rng.uniform(-0.2, 0.2, 3), 0, 1)


def tiny_natural(n: int, rng: np.random.Generator) -> np.ndarray:
    """Shapes over a smooth background, rendered 4x and box-filtered."""
    s = 4
    m = n * s
    yy, xx = (np.mgrid[0:m, 0:m] + 0.5) / m
    c = _colors(rng, 2)
    t = (xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1))
    img = c[0] + (c[1] - c[0]) * ((t - t.min()) / max(np.ptp(t), 1e-12))[..., None]
    for _ in range(rng.integers(2, 6)):
        col = _colors(rng, 1)[0]
        cx, cy = rng.uniform(0, 1, 2)
        if rng.random() < 0.5:
            r = rng.uniform(0.08, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        else:
            hw, hh = rng.uniform(0.05, 0.3, 2)
            mask = (np.abs(xx - cx) < hw) & (np.abs(yy - cy) < hh)
        img = np.where(mask[..., None], col, img)
    img = img.reshape(n, s, n, s, 3).mean(axis=(1, 3))
    img = img + 0.02 * rng.standard_normal(img.shape)
    return np.clip(img, 0, 1)


_GENERATORS = {
    "checkerboards": checkerboard,
    "gradients": gradient,
    "gaussian-textures": gaussian_texture,
    "tiny-natural": tiny_natural,
}


def synth_images(kind: str, n: int, patch: int, seed: int) -> np.ndarray:
    """``n`` HQ images; ``kind="mixed"`` cycles through every generator."""
    if kind != "mixed" and kind not in _GENERATORS:
        raise ConfigError(f"unknown dataset kind {kind!r}; choose from {KINDS + ('mixed',)}")
    base = RngState(seed)
    out = np.empty((n, patch, patch, 3))
    for i in range(n):
        k = KINDS[i % len(KINDS)] if kind == "mixed" else kind
        out[i] = _GENERATORS[k](patch, base.split(i).generator())
    return out


def synth_dataset(kind: str, n: int, patch: int, scale: int = 2, seed: int = 0,
                  task: str = "sr", sigma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(LQ, HQ)`` pairs.

    ``task="sr"``: LQ is the bicubic downsample by ``scale``.
    ``task="denoise"``: LQ is HQ plus gaussian noise of std ``sigma/255``.
    """
    if task == "sr" and patch % scale:
        raise ConfigError(f"patch {patch} not divisible by scale {scale}")
    hq = synth_images(kind, n, patch, seed)
    if task == "sr":
        lq = bicubic_down(hq, scale)
    elif task == "denoise":
        noise = RngState(seed).split(1 << 40).generator().standard_normal(hq.shape)
        lq = hq + noise * (sigma / 255.0)
    else:
        raise ConfigError(f"unknown task {task!r}")
    return lq, hq


def augment(lq: np.ndarray, hq: np.ndarray, rng: np.random.Generator):
    """Same random horizontal flip and 0/90/180/270 rotation for a batch of pairs."""
    lq_out, hq_out = np.empty_like(lq), np.empty_like(hq)
    for i in range(len(lq)):
        a, b = lq[i], hq[i]
        if rng.random() < 0.5:
            a, b = a[:, ::-1], b[:, ::-1]
        k = int(rng.integers(4)) if a.shape[0] == a.shape[1] else 2 * int(rng.integers(2))
        lq_out[i], hq_out[i] = np.rot90(a, k), np.rot90(b, k)
    return lq_out, hq_out
