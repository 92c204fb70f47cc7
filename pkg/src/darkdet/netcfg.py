"""Darknet-style network configuration parsing and shape inference.

Grammar (see README for the EBNF)::

    [net]
    width=416
    height=416
    channels=3

    [convolutional]
    filters=32
    ...

Sections after ``[net]`` are layers numbered from 0. ``route`` and
``shortcut`` accept absolute indices or negative indices relative to the
layer being defined.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import CfgError
from .tensor_ops import conv_output_side, maxpool_output_side

Shape = tuple[int, int, int]  # (c, h, w)

LAYER_KINDS = ("convolutional", "maxpool", "upsample", "route", "shortcut", "yolo")
ACTIVATIONS = ("leaky", "linear")

_KEYS = {
    "net": {"width", "height", "channels"},
    "convolutional": {"filters", "size", "stride", "pad", "padding", "batch_normalize", "activation"},
    "maxpool": {"size", "stride", "padding"},
    "upsample": {"stride"},
    "route": {"layers"},
    "shortcut": {"from", "activation"},
    "yolo": {"mask", "anchors", "classes", "num"},
}

# training-only keys: accepted so stock Darknet files load, otherwise ignored
_TRAINING_KEYS = {
    "net": {
        "batch", "subdivisions", "learning_rate", "momentum", "decay", "max_batches",
        "policy", "steps", "scales", "burn_in", "angle", "saturation", "exposure", "hue",
    },
    "yolo": {"jitter", "ignore_thresh", "truth_thresh", "random"},
}


@dataclass
class LayerSpec:
    """One parsed section. ``attrs`` holds typed, fully resolved values."""

    kind: str
    attrs: dict
    line: Optional[int] = field(default=None, compare=False)

    def __getitem__(self, key):
        return self.attrs[key]

    def get(self, key, default=None):
        return self.attrs.get(key, default)

    # yolo helpers
    @property
    def head_anchors(self) -> list[tuple[float, float]]:
        return [self.attrs["anchors"][m] for m in self.attrs["mask"]]


@dataclass(frozen=True)
class NetworkGraph:
    input_shape: Shape
    layers: tuple[LayerSpec, ...]
    shapes: tuple[Shape, ...]
    yolo_layer_indices: tuple[int, ...]
    classes: int

    @property
    def width(self) -> int:
        return self.input_shape[2]

    @property
    def height(self) -> int:
        return self.input_shape[1]

    def input_shape_of(self, index: int) -> Shape:
        """Shape feeding layer ``index`` (the previous layer's output)."""
        return self.input_shape if index == 0 else self.shapes[index - 1]

    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind == "convolutional"]


def _int(value: str, key: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise CfgError(f"{key}={value!r} is not an integer", line) from None


def _int_list(value: str, key: str, line: int) -> list[int]:
    return [_int(v.strip(), key, line) for v in value.split(",") if v.strip()]


def _float_list(value: str, key: str, line: int) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise CfgError(f"{key}={value!r} is not a list of numbers", line) from None


def _read_sections(text: str) -> list[tuple[str, int, dict[str, tuple[str, int]]]]:
    sections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise CfgError(f"malformed section header {raw.strip()!r}", lineno)
            sections.append((line[1:-1].strip(), lineno, {}))
            continue
        if "=" not in line:
            raise CfgError(f"expected key=value, got {raw.strip()!r}", lineno)
        if not sections:
            raise CfgError("key=value line before any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise CfgError(f"expected key=value, got {raw.strip()!r}", lineno)
        opts = sections[-1][2]
        if key in opts:
            raise CfgError(f"duplicate key {key!r}", lineno)
        opts[key] = (value, lineno)
    return sections


def _check_keys(kind: str, opts: dict, lineno: int) -> None:
    for key, (_, kline) in opts.items():
        if key in _KEYS[kind]:
            continue
        if key in _TRAINING_KEYS.get(kind, ()):
            warnings.warn(f"line {kline}: training-only key {key!r} in [{kind}] ignored", stacklevel=3)
            continue
        raise CfgError(f"unknown key {key!r} in [{kind}] section", kline)


def _resolve_index(ref: int, current: int, lineno: int) -> int:
    target = current + ref if ref < 0 else ref
    if target < 0 or target >= current:
        raise CfgError(
            f"layer {current} references layer {ref} (resolved {target}); only earlier layers are allowed",
            lineno,
        )
    return target


def _parse_layer(kind: str, opts: dict, index: int, lineno: int) -> LayerSpec:
    def req(key):
        if key not in opts:
            raise CfgError(f"[{kind}] layer {index} missing required key {key!r}", lineno)
        return opts[key]

    def opt_int(key, default):
        if key not in opts:
            return default
        value, kline = opts[key]
        return _int(value, key, kline)

    attrs: dict = {}
    if kind == "convolutional":
        value, kline = req("filters")
        attrs["filters"] = _int(value, "filters", kline)
        attrs["size"] = opt_int("size", 1)
        attrs["stride"] = opt_int("stride", 1)
        pad_flag = opt_int("pad", 0)
        # Darknet: pad=1 means "same-style" padding of size//2
        attrs["padding"] = attrs["size"] // 2 if pad_flag else opt_int("padding", 0)
        attrs["batch_normalize"] = opt_int("batch_normalize", 0)
        act = opts.get("activation", ("linear", lineno))[0]
        if act not in ACTIVATIONS:
            raise CfgError(f"unsupported activation {act!r}", opts["activation"][1])
        attrs["activation"] = act
        if attrs["filters"] < 1 or attrs["size"] < 1 or attrs["stride"] < 1 or attrs["padding"] < 0:
            raise CfgError(f"invalid convolution geometry in layer {index}", lineno)
    elif kind == "maxpool":
        attrs["size"] = opt_int("size", 1)
        attrs["stride"] = opt_int("stride", 1)
        attrs["padding"] = opt_int("padding", attrs["size"] - 1)
        if attrs["size"] < 1 or attrs["stride"] < 1 or attrs["padding"] < 0:
            raise CfgError(f"invalid maxpool geometry in layer {index}", lineno)
    elif kind == "upsample":
        attrs["stride"] = opt_int("stride", 2)
        if attrs["stride"] < 2:
            raise CfgError("upsample stride must be >= 2", lineno)
    elif kind == "route":
        value, kline = req("layers")
        refs = _int_list(value, "layers", kline)
        if not refs:
            raise CfgError("route needs at least one layer", kline)
        attrs["layers"] = tuple(_resolve_index(r, index, kline) for r in refs)
    elif kind == "shortcut":
        value, kline = req("from")
        attrs["from"] = _resolve_index(_int(value, "from", kline), index, kline)
        act = opts.get("activation", ("linear", lineno))[0]
        if act != "linear":
            raise CfgError(f"shortcut activation must be linear, got {act!r}", lineno)
        attrs["activation"] = "linear"
    elif kind == "yolo":
        value, kline = req("anchors")
        flat = _float_list(value, "anchors", kline)
        if not flat or len(flat) % 2:
            raise CfgError("anchors must come in (w,h) pairs", kline)
        anchors = tuple(zip(flat[0::2], flat[1::2]))
        num = opt_int("num", len(anchors))
        if num != len(anchors):
            raise CfgError(f"num={num} but {len(anchors)} anchor pairs given", lineno)
        if "mask" in opts:
            mvalue, mline = opts["mask"]
            mask = tuple(_int_list(mvalue, "mask", mline))
        else:
            mask = tuple(range(num))
        if not mask or any(m < 0 or m >= num for m in mask):
            raise CfgError(f"mask {list(mask)} does not index into {num} anchors", lineno)
        classes = opt_int("classes", 0)
        if classes < 1:
            raise CfgError("classes must be >= 1", lineno)
        attrs.update(mask=mask, anchors=anchors, classes=classes, num=num)
    return LayerSpec(kind, attrs, lineno)


def infer_shapes(input_shape: Shape, layers) -> tuple[Shape, ...]:
    """Output shape of every layer, in order. Raises CfgError naming the layer."""
    shapes: list[Shape] = []
    for i, layer in enumerate(layers):
        c, h, w = input_shape if i == 0 else shapes[i - 1]
        a = layer.attrs
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "convolutional":
            oh = conv_output_side(h, a["size"], a["stride"], a["padding"])
            ow = conv_output_side(w, a["size"], a["stride"], a["padding"])
            if oh < 1 or ow < 1:
                raise CfgError(f"{where}: kernel {a['size']} does not fit input {h}x{w}", layer.line)
            shapes.append((a["filters"], oh, ow))
        elif layer.kind == "maxpool":
            if h + a["padding"] < a["size"] or w + a["padding"] < a["size"]:
                raise CfgError(f"{where}: pool window exceeds input {h}x{w}", layer.line)
            shapes.append((
                c,
                maxpool_output_side(h, a["size"], a["stride"], a["padding"]),
                maxpool_output_side(w, a["size"], a["stride"], a["padding"]),
            ))
        elif layer.kind == "upsample":
            shapes.append((c, h * a["stride"], w * a["stride"]))
        elif layer.kind == "route":
            srcs = [shapes[j] for j in a["layers"]]
            if len({s[1:] for s in srcs}) != 1:
                raise CfgError(
                    f"{where}: routed layers {list(a['layers'])} have mismatched spatial sizes "
                    f"{[s[1:] for s in srcs]}",
                    layer.line,
                )
            shapes.append((sum(s[0] for s in srcs), srcs[0][1], srcs[0][2]))
        elif layer.kind == "shortcut":
            other = shapes[a["from"]]
            if other != (c, h, w):
                raise CfgError(
                    f"{where}: shortcut from layer {a['from']} shape {other} != {(c, h, w)}",
                    layer.line,
                )
            shapes.append((c, h, w))
        elif layer.kind == "yolo":
            expected = len(a["mask"]) * (5 + a["classes"])
            if c != expected:
                raise CfgError(
                    f"{where}: incoming depth {c} != B*(5+C) = {len(a['mask'])}*(5+{a['classes']}) = {expected}",
                    layer.line,
                )
            shapes.append((c, h, w))
        else:  # pragma: no cover - kinds are validated during parsing
            raise CfgError(f"{where}: unknown kind", layer.line)
    return tuple(shapes)


def parse_cfg(text: str, size: Optional[int] = None) -> NetworkGraph:
    """Parse configuration text into a shape-checked graph.

    ``size`` overrides both width and height of the net section.
    """
    sections = _read_sections(text)
    if not sections or sections[0][0] != "net":
        line = sections[0][1] if sections else None
        raise CfgError("missing [net] section (it must be the first section)", line)

    _, net_line, net_opts = sections[0]
    _check_keys("net", net_opts, net_line)
    net = {}
    for key in ("width", "height", "channels"):
        if key not in net_opts:
            raise CfgError(f"[net] missing required key {key!r}", net_line)
        value, kline = net_opts[key]
        net[key] = _int(value, key, kline)
    if size is not None:
        net["width"] = net["height"] = size
    if min(net.values()) < 1:
        raise CfgError("[net] width, height and channels must be positive", net_line)

    layers = []
    for index, (kind, lineno, opts) in enumerate(sections[1:]):
        if kind == "net":
            raise CfgError("[net] may only appear once, as the first section", lineno)
        if kind not in LAYER_KINDS:
            raise CfgError(f"unknown section kind [{kind}]", lineno)
        _check_keys(kind, opts, lineno)
        layers.append(_parse_layer(kind, opts, index, lineno))

    input_shape = (net["channels"], net["height"], net["width"])
    shapes = infer_shapes(input_shape, layers)
    yolo = tuple(i for i, l in enumerate(layers) if l.kind == "yolo")
    class_counts = {layers[i]["classes"] for i in yolo}
    if len(class_counts) > 1:
        raise CfgError(f"yolo layers disagree on classes: {sorted(class_counts)}")
    classes = class_counts.pop() if class_counts else 0
    return NetworkGraph(input_shape, tuple(layers), shapes, yolo, classes)


def load_cfg(path, size: Optional[int] = None) -> NetworkGraph:
    return parse_cfg(Path(path).read_text(), size=size)


CONFIG_DIR = Path(__file__).parent / "configs"


def shipped_cfg(name: str) -> Path:
    """Path of a bundled configuration, e.g. ``shipped_cfg("yolov3-c")``."""
    path = CONFIG_DIR / (name if name.endswith(".cfg") else name + ".cfg")
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def to_cfg_text(g: NetworkGraph) -> str:
    """Canonical configuration text; ``parse_cfg(to_cfg_text(g)) == g``."""
    c, h, w = g.input_shape
    out = ["[net]", f"width={w}", f"height={h}", f"channels={c}"]
    for layer in g.layers:
        a = layer.attrs
        out += ["", f"[{layer.kind}]"]
        if layer.kind == "convolutional":
            if a["batch_normalize"]:
                out.append(f"batch_normalize={a['batch_normalize']}")
            out += [
                f"filters={a['filters']}", f"size={a['size']}", f"stride={a['stride']}",
                f"padding={a['padding']}", f"activation={a['activation']}",
            ]
        elif layer.kind == "maxpool":
            out += [f"size={a['size']}", f"stride={a['stride']}", f"padding={a['padding']}"]
        elif layer.kind == "upsample":
            out.append(f"stride={a['stride']}")
        elif layer.kind == "route":
            out.append("layers=" + ",".join(str(i) for i in a["layers"]))
        elif layer.kind == "shortcut":
            out += [f"from={a['from']}", "activation=linear"]
        elif layer.kind == "yolo":
            out += [
                "mask=" + ",".join(str(m) for m in a["mask"]),
                "anchors=" + ", ".join(f"{_fmt_num(aw)},{_fmt_num(ah)}" for aw, ah in a["anchors"]),
                f"classes={a['classes']}",
                f"num={a['num']}",
            ]
    return "\n".join(out) + "\n"


def _layer_params(layer: LayerSpec) -> str:
    a = layer.attrs
    if layer.kind == "convolutional":
        parts = [f"filters={a['filters']}", f"size={a['size']}", f"stride={a['stride']}", f"pad={a['padding']}"]
        if a["batch_normalize"]:
            parts.append("bn")
        parts.append(a["activation"])
        return " ".join(parts)
    if layer.kind == "maxpool":
        return f"size={a['size']} stride={a['stride']}"
    if layer.kind == "upsample":
        return f"stride={a['stride']}"
    if layer.kind == "route":
        return "layers=" + ",".join(str(i) for i in a["layers"])
    if layer.kind == "shortcut":
        return f"from={a['from']}"
    return "mask=" + ",".join(str(m) for m in a["mask"]) + f" classes={a['classes']}"


def emit_shape_report(g: NetworkGraph) -> str:
    """Fixed-width layer table, one row per layer, for humans and golden files."""
    c, h, w = g.input_shape
    rows = [f"# input {c} x {h} x {w}", f"{'layer':>5}  {'kind':<13}  {'params':<42}  output"]
    for i, (layer, (c, h, w)) in enumerate(zip(g.layers, g.shapes)):
        tail = f"{c:>5} x {h:>4} x {w:>4}"
        if layer.kind == "yolo":
            tail += f"  grid={h} stride={g.height // h}"
        rows.append(f"{i:>5}  {layer.kind:<13}  {_layer_params(layer):<42}  {tail}")
    return "\n".join(rows) + "\n"
