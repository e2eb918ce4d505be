import numpy as np
import pytest
from skimage.metrics import structural_similarity

from attnssm.data import (KINDS, augment, bicubic_down, bicubic_up, cubic_kernel, resize_matrix,
                          synth_dataset, synth_images)
from attnssm.metrics import PSNR_CAP, evaluate, psnr, rgb_to_y, ssim
from attnssm.tensor import ConfigError, DimensionError


def test_psnr_known_value():
    a = np.zeros((4, 4, 1))
    b = np.full((4, 4, 1), 0.1)
    assert psnr(a, b, y_channel=False) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_is_capped(g):
    x = g.random((8, 8, 3))
    assert psnr(x, x) == PSNR_CAP


def test_psnr_crop_ignores_border(g):
    x = g.random((10, 10, 3))
    y = x.copy()
    y[0] = 0
    assert psnr(x, y, crop=1) == PSNR_CAP


def test_luma_endpoints():
    assert rgb_to_y(np.zeros(3)) == pytest.approx(16 / 255)
    assert rgb_to_y(np.ones(3)) == pytest.approx(235 / 255)


def test_ssim_matches_skimage(g):
    a = g.random((24, 20))
    b = np.clip(a + 0.1 * g.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0)
    assert ssim(a[..., None], b[..., None], y_channel=False) == pytest.approx(ref, abs=1e-10)


def slow_ssim(a, b):
    w = np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5 ** 2))
    w = np.outer(w, w) / np.outer(w, w).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * pa * pa).sum() - ma ** 2, (w * pb * pb).sum() - mb ** 2
            cab = (w * pa * pb).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_ssim_matches_windowed_loop(g):
    a, b = g.random((14, 13)), g.random((14, 13))
    assert ssim(a[..., None], b[..., None], False) == pytest.approx(slow_ssim(a, b), abs=1e-12)


def test_ssim_identity_and_size(g):
    x = g.random((12, 12, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)))


def test_evaluate_report(g):
    x = g.random((2, 12, 12, 3))
    rep = evaluate(x, np.clip(x + 0.01, 0, 1))
    assert len(rep.per_image_psnr) == 2 and rep.psnr == pytest.approx(np.mean(rep.per_image_psnr))


def test_cubic_kernel_interpolates():
    assert cubic_kernel(np.array([0.0]))[0] == 1.0
    np.testing.assert_allclose(cubic_kernel(np.array([1.0, 2.0, -1.0, 2.5])), 0.0, atol=1e-15)
    x = np.linspace(-0.999, 0.999, 41)
    np.testing.assert_allclose(sum(cubic_kernel(x + k) for k in range(-3, 4)), 1.0, atol=1e-12)


def test_resize_rows_sum_to_one():
    for n_in, n_out in [(8, 16), (16, 8), (9, 27), (12, 4)]:
        np.testing.assert_allclose(resize_matrix(n_in, n_out).sum(1), 1.0, atol=1e-12)


def test_bicubic_preserves_constants_and_linear_ramps():
    c = np.full((8, 8, 3), 0.3)
    np.testing.assert_allclose(bicubic_up(c, 2), 0.3, atol=1e-12)
    ramp = np.tile(np.linspace(0.2, 0.8, 16)[None, :, None], (16, 1, 1))
    up = bicubic_up(ramp, 2)
    # interior of an upsampled ramp stays linear
    np.testing.assert_allclose(np.diff(up[4, 6:-6, 0], 2), 0.0, atol=1e-12)


def test_bicubic_down_shape():
    assert bicubic_down(np.zeros((2, 32, 32, 3)), 2).shape == (2, 16, 16, 3)


@pytest.mark.parametrize("kind", KINDS)
def test_generators_in_range_and_deterministic(kind):
    a = synth_images(kind, 3, 16, seed=5)
    assert a.shape == (3, 16, 16, 3) and a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, synth_images(kind, 3, 16, seed=5))
    assert not np.array_equal(a, synth_images(kind, 3, 16, seed=6))


def test_mixed_dataset_and_tasks():
    lq, hq = synth_dataset("mixed", 8, 16, 2, seed=0)
    assert lq.shape == (8, 8, 8, 3) and hq.shape == (8, 16, 16, 3)
    nq, clean = synth_dataset("gradients", 2, 16, task="denoise", sigma=25, seed=0)
    assert nq.shape == clean.shape
    assert np.std(nq - clean) == pytest.approx(25 / 255, rel=0.15)
    with pytest.raises(ConfigError):
        synth_dataset("stars", 2, 16)
    with pytest.raises(ConfigError):
        synth_dataset("mixed", 2, 15, 2)


def test_augment_applies_same_transform(g):
    hq = g.random((4, 8, 8, 3))
    lq = hq[:, ::2, ::2]
    a_lq, a_hq = augment(lq, hq, np.random.default_rng(3))
    for i in range(4):
        # each augmented HQ is a dihedral transform of its source
        cands = [np.rot90(f, k) for f in (hq[i], hq[i][:, ::-1]) for k in range(4)]
        idx = [j for j, c in enumerate(cands) if np.array_equal(c, a_hq[i])]
        assert idx
        lq_cands = [np.rot90(f, k) for f in (lq[i], lq[i][:, ::-1]) for k in range(4)]
        assert np.array_equal(lq_cands[idx[0]], a_lq[i])


def test_denoise_sigma_zero_is_identity():
    lq, hq = synth_dataset("tiny-natural", 3, 16, task="denoise", sigma=0.0, seed=1)
    assert np.array_equal(lq, hq)


def test_bicubic_constant_image():
    c = np.full((1, 12, 12, 3), 0.42)
    np.testing.assert_allclose(bicubic_down(c, 3), 0.42, atol=1e-12)
