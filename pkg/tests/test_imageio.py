import numpy as np
import pytest
from PIL import Image

from attnssm.imageio import ImageError, read_image, to_uint8, write_image


@pytest.mark.parametrize("mode", ["RGB", "RGBA", "L", "LA"])
def test_reads_pillow_pngs(tmp_path, g, mode):
    # a smooth-plus-noise image makes Pillow pick a mix of row filters
    base = (np.linspace(0, 255, 23)[None, :, None] * np.ones((17, 1, 4))
            + g.integers(0, 40, (17, 23, 4))).clip(0, 255).astype(np.uint8)
    img = Image.fromarray(base[..., :len(mode)] if len(mode) > 1 else base[..., 0], mode)
    img.save(tmp_path / "a.png", optimize=True)
    got = read_image(tmp_path / "a.png")
    ref = np.asarray(img.convert("RGB"), dtype=np.float64) / 255
    assert got.shape == (17, 23, 3)
    np.testing.assert_array_equal(got, ref)


def test_png_roundtrip(tmp_path, g):
    u8 = g.integers(0, 256, (9, 11, 3)).astype(np.uint8)
    write_image(tmp_path / "x.png", u8 / 255.0)
    assert np.array_equal(to_uint8(read_image(tmp_path / "x.png")), u8)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "x.png")), u8)


def test_ppm_and_pgm(tmp_path, g):
    u8 = g.integers(0, 256, (5, 4, 3)).astype(np.uint8)
    write_image(tmp_path / "x.ppm", u8 / 255.0)
    assert np.array_equal(to_uint8(read_image(tmp_path / "x.ppm")), u8)
    Image.fromarray(u8[..., 0], "L").save(tmp_path / "x.pgm")
    got = read_image(tmp_path / "x.pgm")
    assert np.array_equal(to_uint8(got[..., 1]), u8[..., 0])


def test_errors(tmp_path):
    with pytest.raises(ImageError):
        read_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"hello")
    with pytest.raises(ImageError):
        read_image(tmp_path / "junk.png")


def test_to_uint8_clips_and_rounds():
    assert to_uint8(np.array([-0.5, 0.5, 1.5, 0.998])).tolist() == [0, 128, 255, 254]
