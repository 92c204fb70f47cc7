import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkdet.errors import ImageError
from darkdet.imageio import (
    decode_ppm,
    encode_ppm,
    letterbox,
    letterbox_geometry,
    read_image,
    resize_bilinear,
)


def test_white_2x2():
    img = decode_ppm(b"P6\n2 2\n255\n" + b"\xff" * 12)
    assert img.shape == (1, 3, 2, 2) and img.dtype == np.float32
    assert np.all(img == 1.0)


def test_red_pixel():
    img = decode_ppm(b"P6 1 1 255 \xff\x00\x00")
    np.testing.assert_array_equal(img[0, :, 0, 0], [1.0, 0.0, 0.0])


def test_channel_and_row_order():
    # 2 wide, 1 high: first pixel green, second blue
    img = decode_ppm(b"P6\n2 1\n255\n\x00\xff\x00\x00\x00\xff")
    np.testing.assert_array_equal(img[0, :, 0, 0], [0, 1, 0])
    np.testing.assert_array_equal(img[0, :, 0, 1], [0, 0, 1])


def test_header_comments():
    img = decode_ppm(b"P6\n# made by hand\n1 1\n# depth\n255\n\x80\x80\x80")
    assert img[0, 0, 0, 0] == pytest.approx(128 / 255)


def test_sixteen_bit():
    img = decode_ppm(b"P6\n1 1\n65535\n\xff\xff\x00\x00\x80\x00")
    assert img[0, :, 0, 0] == pytest.approx([1.0, 0.0, 32768 / 65535])


def test_truncated_pixels():
    with pytest.raises(ImageError, match="claims 4 pixels"):
        decode_ppm(b"P6\n2 2\n255\n" + b"\xff" * 9)


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n1 2 3\n", b"\x89PNG\r\n", b""])
def test_bad_magic(data):
    with pytest.raises(ImageError, match="magic"):
        decode_ppm(data)


def test_truncated_header():
    with pytest.raises(ImageError, match="header"):
        decode_ppm(b"P6\n2 2")


def test_encode_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(1, 3, 5, 7)).astype(np.float32) / 255
    path = tmp_path / "x.ppm"
    path.write_bytes(encode_ppm(img))
    np.testing.assert_array_equal(read_image(path), img)


def test_missing_file(tmp_path):
    with pytest.raises(ImageError, match="cannot read"):
        read_image(tmp_path / "nope.ppm")


def test_non_ppm_needs_flag(tmp_path):
    path = tmp_path / "x.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\n")
    with pytest.raises(ImageError, match="magic"):
        read_image(path)


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(0).random((1, 3, 4, 5), dtype=np.float32)
        np.testing.assert_array_equal(resize_bilinear(img, 5, 4), img)

    def test_constant_stays_constant(self):
        img = np.full((1, 3, 3, 5), 0.25, np.float32)
        np.testing.assert_allclose(resize_bilinear(img, 13, 7), 0.25, atol=1e-7)

    def test_corners_preserved(self):
        img = np.random.default_rng(1).random((1, 3, 4, 6), dtype=np.float32)
        out = resize_bilinear(img, 11, 9)
        for r, c, rr, cc in [(0, 0, 0, 0), (0, -1, 0, -1), (-1, 0, -1, 0), (-1, -1, -1, -1)]:
            np.testing.assert_allclose(out[..., r, c], img[..., rr, cc], rtol=1e-6)

    def test_midpoint_interpolates(self):
        img = np.zeros((1, 1, 1, 2), np.float32)
        img[..., 1] = 1.0
        out = resize_bilinear(img, 3, 1)
        np.testing.assert_allclose(out[0, 0, 0], [0.0, 0.5, 1.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12))
    def test_shape_and_range(self, h, w, oh, ow):
        img = np.random.default_rng(h * 31 + w).random((1, 3, h, w), dtype=np.float32)
        out = resize_bilinear(img, ow, oh)
        assert out.shape == (1, 3, oh, ow)
        assert out.min() >= img.min() - 1e-6 and out.max() <= img.max() + 1e-6


class TestLetterbox:
    def test_geometry(self):
        assert letterbox_geometry(640, 480, 416, 416) == (416, 312)
        assert letterbox_geometry(480, 640, 416, 416) == (312, 416)
        assert letterbox_geometry(100, 100, 416, 416) == (416, 416)

    def test_canvas_padding(self):
        img = np.ones((1, 3, 2, 4), np.float32)
        out = letterbox(img, 8, 8)
        assert out.shape == (1, 3, 8, 8)
        assert np.all(out[..., :2, :] == 0.5) and np.all(out[..., 6:, :] == 0.5)
        assert np.all(out[..., 2:6, :] == 1.0)
