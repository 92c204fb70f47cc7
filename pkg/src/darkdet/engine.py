"""Weight loading and the forward pass over a parsed NetworkGraph."""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor_ops as ops
from .errors import StructuralError, WeightsError
from .netcfg import NetworkGraph

HEADER = struct.Struct("<iiiq")  # major, minor, revision, images_seen
SUPPORTED_MINOR = (1, 2)


@dataclass
class WeightStore:
    header: tuple[int, int, int, int]
    convs: dict[int, ops.ConvParams]  # keyed by layer index

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        return self.header == other.header and _flat_values(self) == _flat_values(other)

    def values(self) -> np.ndarray:
        """All stored floats in file order."""
        return np.concatenate([_layer_floats(p) for _, p in sorted(self.convs.items())]) \
            if self.convs else np.zeros(0, np.float32)


def _layer_floats(p: ops.ConvParams) -> np.ndarray:
    if p.batch_norm is not None:
        bn = p.batch_norm
        head = [bn.beta, bn.gamma, bn.mean, bn.var]
    else:
        head = [p.bias]
    return np.concatenate(head + [p.weights.reshape(-1)]).astype(np.float32)


def _flat_values(store: WeightStore) -> bytes:
    return store.values().tobytes()


def _conv_geometry(g: NetworkGraph, index: int) -> tuple[int, int, int, int, int, bool]:
    a = g.layers[index].attrs
    in_c = g.input_shape_of(index)[0]
    return a["filters"], in_c, a["size"], a["stride"], a["padding"], bool(a["batch_normalize"])


def expected_payload_floats(g: NetworkGraph) -> int:
    total = 0
    for i in g.conv_indices():
        filters, in_c, size, _, _, bn = _conv_geometry(g, i)
        total += filters * (4 if bn else 1) + filters * in_c * size * size
    return total


def load_weights(g: NetworkGraph, data: bytes) -> WeightStore:
    """Decode a Darknet ``.weights`` byte string laid out for ``g``.

    Layout: a 20-byte header (three int32 version fields, one int64 image
    count) followed, per convolutional layer in graph order, by either
    beta/gamma/mean/var (batch-normalized layers) or bias, then the kernel.
    All values are little-endian float32.
    """
    data = memoryview(bytes(data))
    if len(data) < HEADER.size:
        raise WeightsError(f"file too short for the {HEADER.size}-byte header", len(data))
    major, minor, revision, seen = HEADER.unpack_from(data, 0)
    if major != 0 or minor not in SUPPORTED_MINOR:
        raise WeightsError(f"unsupported weights version {major}.{minor}.{revision}", 0)

    offset = HEADER.size
    convs = {}

    def take(count: int, what: str) -> np.ndarray:
        nonlocal offset
        nbytes = 4 * count
        if offset + nbytes > len(data):
            raise WeightsError(
                f"{what}: need {nbytes} bytes starting at {offset}, file ends early",
                len(data),
            )
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)
        offset += nbytes
        return arr

    for i in g.conv_indices():
        filters, in_c, size, stride, pad, bn = _conv_geometry(g, i)
        if bn:
            beta = take(filters, f"layer {i} bn beta")
            gamma = take(filters, f"layer {i} bn gamma")
            mean = take(filters, f"layer {i} bn mean")
            var = take(filters, f"layer {i} bn var")
            norm = ops.BatchNorm(gamma=gamma, beta=beta, mean=mean, var=var)
            bias = np.zeros(filters, np.float32)
        else:
            norm = None
            bias = take(filters, f"layer {i} bias")
        weights = take(filters * in_c * size * size, f"layer {i} weights")
        convs[i] = ops.ConvParams(
            filters, size, stride, pad, weights.reshape(filters, in_c, size, size), bias, norm
        )

    if offset != len(data):
        raise WeightsError(f"{len(data) - offset} trailing bytes after the last layer", offset)
    return WeightStore((major, minor, revision, seen), convs)


def dump_weights(store: WeightStore) -> bytes:
    """Serialize ``store`` in the layout ``load_weights`` reads."""
    return HEADER.pack(*store.header) + store.values().astype("<f4").tobytes()


def random_init(g: NetworkGraph, seed: int) -> WeightStore:
    """Deterministic pseudorandom weights for desk-scale runs.

    Kernel and bias values are uniform in ``[-b, b]`` with
    ``b = min(0.1, sqrt(3 / fan_in))`` so activations stay finite through
    deep residual stacks. Batch norm starts as the identity (mean 0, var 1,
    gamma 1, beta 0).
    """
    rng = np.random.default_rng(seed)
    convs = {}
    for i in g.conv_indices():
        filters, in_c, size, stride, pad, bn = _conv_geometry(g, i)
        fan_in = in_c * size * size
        bound = min(0.1, float(np.sqrt(3.0 / fan_in)))
        weights = rng.uniform(-bound, bound, (filters, in_c, size, size)).astype(np.float32)
        if bn:
            norm = ops.BatchNorm(
                gamma=np.ones(filters), beta=np.zeros(filters),
                mean=np.zeros(filters), var=np.ones(filters),
            )
            bias = np.zeros(filters, np.float32)
        else:
            norm = None
            bias = rng.uniform(-bound, bound, filters).astype(np.float32)
        convs[i] = ops.ConvParams(filters, size, stride, pad, weights, bias, norm)
    return WeightStore((0, 2, 0, 0), convs)


@dataclass
class ForwardResult:
    yolo_outputs: list[tuple[int, np.ndarray]]
    timings_ms: Optional[dict[int, float]] = field(default=None, compare=False)

    @property
    def tensors(self) -> list[np.ndarray]:
        return [t for _, t in self.yolo_outputs]


def _last_use(g: NetworkGraph) -> list[int]:
    """Index of the last layer that reads each layer's output."""
    last = list(range(1, len(g.layers) + 1))  # the next layer, by default
    for i, layer in enumerate(g.layers):
        refs = ()
        if layer.kind == "route":
            refs = layer["layers"]
        elif layer.kind == "shortcut":
            refs = (layer["from"],)
        for r in refs:
            last[r] = max(last[r], i)
    return last


def forward(
    g: NetworkGraph,
    w: WeightStore,
    x,
    release: bool = True,
    timing: bool = False,
) -> ForwardResult:
    """Run ``x`` (shape ``(1, c, h, w)``) through ``g``.

    With ``release`` set, intermediate outputs are dropped as soon as no
    later layer reads them; results do not depend on this.
    """
    x = ops.as_tensor(x)
    if x.shape != (1, *g.input_shape):
        raise StructuralError(f"input shape {x.shape} != network input {(1, *g.input_shape)}")

    last_use = _last_use(g)
    cache: dict[int, np.ndarray] = {}
    outputs = []
    timings = {} if timing else None
    prev = x
    for i, layer in enumerate(g.layers):
        start = time.perf_counter() if timing else 0.0
        a = layer.attrs
        try:
            if layer.kind == "convolutional":
                out = ops.conv2d(prev, w.convs[i])
                if a["activation"] == "leaky":
                    out = ops.leaky_relu(out)
            elif layer.kind == "maxpool":
                out = ops.maxpool(prev, a["size"], a["stride"], a["padding"])
            elif layer.kind == "upsample":
                out = ops.upsample_nearest(prev, a["stride"])
            elif layer.kind == "route":
                out = cache[a["layers"][0]]
                for j in a["layers"][1:]:
                    out = ops.concat_channels(out, cache[j])
            elif layer.kind == "shortcut":
                out = ops.shortcut_add(prev, cache[a["from"]])
            else:  # yolo: raw logits pass through, decoding happens downstream
                out = prev
                outputs.append((i, out))
        except (StructuralError, KeyError) as exc:
            raise StructuralError(f"layer {i} ({layer.kind}): {exc}") from exc

        if out.shape[1:] != g.shapes[i]:
            raise StructuralError(f"layer {i} ({layer.kind}) produced {out.shape}, expected {g.shapes[i]}")
        cache[i] = out
        prev = out
        if release:
            for j in [j for j in cache if last_use[j] <= i and j != i]:
                del cache[j]
        if timing:
            timings[i] = (time.perf_counter() - start) * 1000.0
    return ForwardResult(outputs, timings)
