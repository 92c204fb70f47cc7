"""Minimal raster input: binary PPM decoding and Darknet-style resizing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ImageError

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    ends the last one.
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WHITESPACE:
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise ImageError("truncated PPM header")
        start = i
        while i < n and data[i] not in _WHITESPACE and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
    return tokens, i


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary (P6) PPM into a ``(1, 3, H, W)`` float32 tensor in [0, 1]."""
    if data[:2] != b"P6":
        raise ImageError(f"unsupported image magic {data[:2]!r}; expected binary PPM 'P6'")
    tokens, end = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageError(f"non-numeric PPM header fields {tokens[1:]!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageError(f"invalid PPM geometry {width}x{height} maxval {maxval}")
    if end >= len(data) or data[end] not in _WHITESPACE:
        raise ImageError("PPM header is not terminated by whitespace")
    start = end + 1
    sample = 1 if maxval < 256 else 2
    need = width * height * 3 * sample
    pixels = data[start:start + need]
    if len(pixels) < need:
        raise ImageError(
            f"truncated PPM pixel data: header claims {width * height} pixels "
            f"({need} bytes), only {len(pixels)} bytes present"
        )
    arr = np.frombuffer(pixels, dtype=np.uint8 if sample == 1 else ">u2")
    arr = arr.reshape(height, width, 3).astype(np.float32) / np.float32(maxval)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


def encode_ppm(image) -> bytes:
    """Encode a ``(1, 3, H, W)`` or ``(H, W, 3)`` image in [0, 1] as P6."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0].transpose(1, 2, 0)
    h, w = arr.shape[:2]
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_image(path, allow_other_formats: bool = False) -> np.ndarray:
    """Load an image file as a ``(1, 3, H, W)`` tensor with values in [0, 1].

    Binary PPM is always supported; with ``allow_other_formats`` anything
    Pillow can open is accepted as well.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {path}: {exc.strerror or exc}") from exc
    if data[:2] == b"P6" or not allow_other_formats:
        return decode_ppm(data)
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - Pillow is optional
        raise ImageError("non-PPM input needs Pillow installed") from None
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)[None])


def resize_bilinear(image, width: int, height: int) -> np.ndarray:
    """Darknet's two-pass bilinear resize, mapping corner pixels to corners."""
    im = np.asarray(image, dtype=np.float32)
    n, c, ih, iw = im.shape
    if (iw, ih) == (width, height):
        return im.copy()

    if width > 1:
        sx = np.arange(width) * ((iw - 1) / (width - 1))
    else:
        sx = np.zeros(1)
    ix = np.minimum(sx.astype(np.int64), iw - 1)
    dx = (sx - ix).astype(np.float32)
    ix1 = np.minimum(ix + 1, iw - 1)
    part = im[..., ix] * (1 - dx) + im[..., ix1] * dx
    # the last column (and single-column sources) copy the edge pixel
    part[..., -1] = im[..., iw - 1]
    if iw == 1:
        part[...] = im[..., :1]

    if height > 1:
        sy = np.arange(height) * ((ih - 1) / (height - 1))
    else:
        sy = np.zeros(1)
    iy = np.minimum(sy.astype(np.int64), ih - 1)
    dy = (sy - iy).astype(np.float32)[:, None]
    iy1 = np.minimum(iy + 1, ih - 1)
    out = part[..., iy, :] * (1 - dy)
    lower = part[..., iy1, :] * dy
    lower[..., -1, :] = 0  # the last row takes no contribution from below
    if ih == 1:
        lower[...] = 0
    return np.ascontiguousarray((out + lower).astype(np.float32))


def letterbox_geometry(img_w: int, img_h: int, net_w: int, net_h: int) -> tuple[int, int]:
    """Size of the aspect-preserving resize inside a ``net_w x net_h`` canvas."""
    if net_w / img_w < net_h / img_h:
        return net_w, (img_h * net_w) // img_w
    return (img_w * net_h) // img_h, net_h


def letterbox(image, width: int, height: int) -> np.ndarray:
    """Resize preserving aspect ratio and center on a 0.5-gray canvas."""
    im = np.asarray(image, dtype=np.float32)
    new_w, new_h = letterbox_geometry(im.shape[3], im.shape[2], width, height)
    resized = resize_bilinear(im, new_w, new_h)
    canvas = np.full((im.shape[0], im.shape[1], height, width), 0.5, dtype=np.float32)
    top, left = (height - new_h) // 2, (width - new_w) // 2
    canvas[..., top:top + new_h, left:left + new_w] = resized
    return canvas
