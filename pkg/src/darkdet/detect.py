"""Decoding yolo heads into boxes, confidence filtering and greedy NMS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import StructuralError

DEFAULT_CONF_THRESH = 0.25
DEFAULT_NMS_THRESH = 0.45


@dataclass(frozen=True)
class Box:
    """Center-format box, normalized to the network input."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "Box":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Detection:
    box: Box
    objectness: float
    class_scores: tuple[float, ...]
    best_class: int
    confidence: float

    @classmethod
    def from_scores(cls, box: Box, objectness: float, class_scores: Sequence[float]) -> "Detection":
        scores = tuple(float(s) for s in class_scores)
        best = int(np.argmax(scores))  # first maximum wins ties
        return cls(box, float(objectness), scores, best, float(objectness) * scores[best])


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-x))


def decode_head_arrays(raw, anchors, classes: int, net_side: Union[int, tuple[int, int]]):
    """Vectorized decode of one head.

    Returns ``(boxes, objectness, class_scores)`` with shapes ``(N, 4)``
    (cx, cy, w, h), ``(N,)`` and ``(N, classes)``, ``N = rows*cols*B``,
    ordered by cell (row-major) and then by anchor.
    """
    raw = np.asarray(raw)
    if raw.ndim == 4:
        if raw.shape[0] != 1:
            raise StructuralError(f"decode expects batch size 1, got {raw.shape[0]}")
        raw = raw[0]
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    n_anchor = len(anchors)
    depth, rows, cols = raw.shape
    if depth != n_anchor * (5 + classes):
        raise StructuralError(
            f"head depth {depth} != B*(5+C) = {n_anchor}*(5+{classes}) = {n_anchor * (5 + classes)}"
        )
    net_w, net_h = (net_side, net_side) if np.isscalar(net_side) else net_side

    t = raw.astype(np.float64).reshape(n_anchor, 5 + classes, rows, cols)
    t = t.transpose(2, 3, 0, 1)  # (rows, cols, B, 5+C)
    gy, gx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    cx = (sigmoid(t[..., 0]) + gx[..., None]) / cols
    cy = (sigmoid(t[..., 1]) + gy[..., None]) / rows
    w = anchors[:, 0] * np.exp(t[..., 2]) / net_w
    h = anchors[:, 1] * np.exp(t[..., 3]) / net_h
    boxes = np.stack([cx, cy, w, h], axis=-1).reshape(-1, 4)
    objectness = sigmoid(t[..., 4]).reshape(-1)
    scores = sigmoid(t[..., 5:]).reshape(-1, classes)
    return boxes, objectness, scores


def decode_head(raw, anchors, classes: int, net_side) -> list[Detection]:
    """Decode every (cell, anchor) slot of a raw head into a Detection."""
    boxes, obj, scores = decode_head_arrays(raw, anchors, classes, net_side)
    best = scores.argmax(axis=1)
    conf = obj * scores[np.arange(len(best)), best]
    return [
        Detection(Box(*map(float, b)), float(o), tuple(s.tolist()), int(k), float(c))
        for b, o, s, k, c in zip(boxes, obj, scores, best, conf)
    ]


def filter_confidence(dets: Iterable[Detection], threshold: float = DEFAULT_CONF_THRESH) -> list[Detection]:
    """Keep detections whose confidence exceeds ``threshold``.

    A threshold of 0 keeps everything, even confidences that underflowed to 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"confidence threshold must be in [0, 1], got {threshold}")
    dets = list(dets)
    if threshold <= 0.0:
        return dets
    return [d for d in dets if d.confidence > threshold]


def _iou_corners(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    return _iou_corners(a.corners(), b.corners())


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between corner-format arrays ``(n, 4)`` and ``(m, 4)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_NMS_THRESH) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    Within each class, detections are visited by descending confidence
    (earlier index first on ties); a detection is dropped when its IoU with
    an already kept one exceeds ``iou_threshold``. Survivors are returned in
    their input order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"NMS threshold must be in [0, 1], got {iou_threshold}")
    dets = list(dets)
    if len(dets) < 2:
        return dets
    corners = np.array([d.box.corners() for d in dets], dtype=np.float64)
    conf = np.array([d.confidence for d in dets], dtype=np.float64)
    cls = np.array([d.best_class for d in dets])
    keep = np.zeros(len(dets), dtype=bool)

    # IoU > t forces each side ratio above t, so a box that can be suppressed
    # by pivot i has its center within size_i * (1 + 1/t) / 2 of i's center
    # on both axes. Candidates are found by window lookups in cx order.
    centers = 0.5 * (corners[:, :2] + corners[:, 2:])
    if iou_threshold > 0:
        reach = 0.5 * (1.0 + 1.0 / iou_threshold) * (1.0 + 1e-9)
        windows = (corners[:, 2:] - corners[:, :2]) * reach
    else:
        windows = np.full((len(dets), 2), np.inf)

    for c in np.unique(cls):
        idx = np.flatnonzero(cls == c)
        perm = np.argsort(-conf[idx], kind="stable")
        order = idx[perm]
        rank = np.empty(len(order), dtype=np.int64)
        rank[perm] = np.arange(len(order))  # visiting position of idx[k]
        by_x = np.argsort(centers[idx, 0], kind="stable")
        cx_sorted = centers[idx[by_x], 0]
        alive = np.ones(len(order), dtype=bool)
        for pos in range(len(order)):
            if not alive[pos]:
                continue
            i = order[pos]
            keep[i] = True
            lo = np.searchsorted(cx_sorted, centers[i, 0] - windows[i, 0], "left")
            hi = np.searchsorted(cx_sorted, centers[i, 0] + windows[i, 0], "right")
            local = by_x[lo:hi]
            r = rank[local]
            sel = (r > pos) & alive[r]
            sel &= np.abs(centers[idx[local], 1] - centers[i, 1]) <= windows[i, 1]
            if not sel.any():
                continue
            r = r[sel]
            overlaps = iou_matrix(corners[i], corners[order[r]])[0]
            alive[r[overlaps > iou_threshold]] = False
    return [d for d, k in zip(dets, keep) if k]
