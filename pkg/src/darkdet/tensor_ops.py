"""Dense NCHW float32 kernels used by the Darknet-style forward pass.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)`` and
dtype ``float32``. Every kernel returns a fresh array and never mutates
its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, StructuralError

LEAKY_SLOPE = 0.1
BN_EPSILON = 1e-5


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a contiguous 4-D float32 array, validating extents."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise StructuralError(f"tensor must be 4-D (n, c, h, w), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise StructuralError(f"all tensor extents must be >= 1, got {arr.shape}")
    return arr


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float32).reshape(-1))
        n = self.gamma.size
        if not (self.beta.size == self.mean.size == self.var.size == n):
            raise StructuralError("batch-norm parameter vectors differ in length")
        if np.any(self.var < 0):
            raise NumericError("batch-norm rolling variance must be non-negative")


@dataclass
class ConvParams:
    """Weights and geometry of one convolutional layer.

    ``weights`` has shape ``(filters, in_c, size, size)``, the same C order
    Darknet writes to disk.
    """

    filters: int
    size: int
    stride: int
    pad: int
    weights: np.ndarray
    bias: np.ndarray
    batch_norm: Optional[BatchNorm] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim == 1:
            per_filter = self.size * self.size
            if per_filter == 0 or w.size % (self.filters * per_filter):
                raise StructuralError(
                    f"{w.size} weights cannot fill {self.filters} filters of {self.size}x{self.size}"
                )
            w = w.reshape(self.filters, -1, self.size, self.size)
        if w.shape[0] != self.filters or w.shape[2:] != (self.size, self.size):
            raise StructuralError(
                f"weights shape {w.shape} does not match filters={self.filters} size={self.size}"
            )
        self.weights = np.ascontiguousarray(w)
        self.bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if self.bias.size != self.filters:
            raise StructuralError(f"bias has {self.bias.size} entries for {self.filters} filters")
        if self.stride < 1 or self.pad < 0:
            raise StructuralError(f"invalid stride={self.stride} / pad={self.pad}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def conv_output_side(side: int, size: int, stride: int, pad: int) -> int:
    return (side + 2 * pad - size) // stride + 1


def conv2d(x, p: ConvParams) -> np.ndarray:
    """Cross-correlate ``x`` with ``p.weights``, add bias, then batch-norm if present."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise StructuralError(
            f"conv input has {c} channels but weights expect {p.in_channels}"
        )
    oh = conv_output_side(h, p.size, p.stride, p.pad)
    ow = conv_output_side(w, p.size, p.stride, p.pad)
    if oh < 1 or ow < 1:
        raise StructuralError(
            f"{p.size}x{p.size} kernel does not fit a {h}x{w} input with pad {p.pad}"
        )
    kernel = p.weights.reshape(p.filters, -1)

    if p.size == 1 and p.stride == 1 and p.pad == 0:
        cols = x.reshape(n, c, h * w)
    else:
        if p.pad:
            x = np.pad(x, ((0, 0), (0, 0), (p.pad, p.pad), (p.pad, p.pad)))
        win = sliding_window_view(x, (p.size, p.size), axis=(2, 3))
        win = win[:, :, : (oh - 1) * p.stride + 1 : p.stride, : (ow - 1) * p.stride + 1 : p.stride]
        # (n, c, oh, ow, k, k) -> (n, c*k*k, oh*ow), matching the kernel's row layout
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * p.size * p.size, oh * ow)

    out = np.matmul(kernel, cols).reshape(n, p.filters, oh, ow)
    out += p.bias[None, :, None, None]
    if p.batch_norm is not None:
        bn = p.batch_norm
        out = batch_norm_apply(out, bn.gamma, bn.beta, bn.mean, bn.var)
    return out


def batch_norm_apply(x, gamma, beta, mean, var, epsilon: float = BN_EPSILON) -> np.ndarray:
    x = as_tensor(x)
    c = x.shape[1]
    params = [np.asarray(v, dtype=np.float32).reshape(-1) for v in (gamma, beta, mean, var)]
    if any(v.size != c for v in params):
        raise StructuralError(
            f"batch-norm parameters must have {c} entries, got {[v.size for v in params]}"
        )
    gamma, beta, mean, var = params
    denom = var.astype(np.float64) + epsilon
    if np.any(denom <= 0):
        raise NumericError("batch-norm variance + epsilon must be positive")
    scale = (gamma / np.sqrt(denom)).astype(np.float32)
    bcast = (None, slice(None), None, None)
    return (x - mean[bcast]) * scale[bcast] + beta[bcast]


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> np.ndarray:
    x = as_tensor(x)
    return np.maximum(x, np.float32(slope) * x)


def maxpool_output_side(side: int, size: int, stride: int, padding: Optional[int] = None) -> int:
    if padding is None:
        padding = size - 1
    return (side + padding - size) // stride + 1


def maxpool(x, size: int, stride: int, padding: Optional[int] = None) -> np.ndarray:
    """Max pooling with Darknet's edge rule.

    ``padding`` defaults to ``size - 1`` total cells, of which ``padding // 2``
    go on the top/left and the rest on the bottom/right. Padded cells never win.
    """
    x = as_tensor(x)
    if size < 1 or stride < 1:
        raise StructuralError(f"maxpool needs size >= 1 and stride >= 1, got {size}/{stride}")
    if padding is None:
        padding = size - 1
    n, c, h, w = x.shape
    if h + padding < size or w + padding < size:
        raise StructuralError(f"{size}x{size} pool window exceeds padded {h}x{w} input")
    oh = maxpool_output_side(h, size, stride, padding)
    ow = maxpool_output_side(w, size, stride, padding)
    before = padding // 2
    # enough trailing pad for the last window; -inf never survives the max
    after_h = max((oh - 1) * stride + size - before - h, 0)
    after_w = max((ow - 1) * stride + size - before - w, 0)
    if before or after_h or after_w:
        x = np.pad(
            x,
            ((0, 0), (0, 0), (before, after_h), (before, after_w)),
            constant_values=-np.inf,
        )
    win = sliding_window_view(x, (size, size), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.max(axis=(4, 5)))


def upsample_nearest(x, factor: int) -> np.ndarray:
    x = as_tensor(x)
    if int(factor) != factor or factor < 2:
        raise StructuralError(f"upsample factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def concat_channels(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise StructuralError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def shortcut_add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise StructuralError(f"shortcut shapes differ: {a.shape} vs {b.shape}")
    return a + b
