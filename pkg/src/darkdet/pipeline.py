"""Image-to-detections pipeline: resize, forward, decode, filter, NMS, un-map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import (
    DEFAULT_CONF_THRESH,
    DEFAULT_NMS_THRESH,
    Detection,
    decode_head,
    filter_confidence,
    nms,
)
from .engine import WeightStore, forward
from .evalkit import ImageDetection
from .imageio import letterbox, letterbox_geometry, resize_bilinear
from .netcfg import NetworkGraph


@dataclass
class Detector:
    graph: NetworkGraph
    weights: WeightStore
    conf_thresh: float = DEFAULT_CONF_THRESH
    nms_thresh: float = DEFAULT_NMS_THRESH
    use_letterbox: bool = False

    def prepare(self, image: np.ndarray) -> np.ndarray:
        net_w, net_h = self.graph.width, self.graph.height
        if self.use_letterbox:
            return letterbox(image, net_w, net_h)
        return resize_bilinear(image, net_w, net_h)

    def raw_detections(self, image: np.ndarray) -> list[Detection]:
        """Decoded, filtered and suppressed detections in network coordinates.

        Heads are concatenated in graph order before NMS. An NMS threshold
        of 0 disables suppression.
        """
        result = forward(self.graph, self.weights, self.prepare(image))
        net = (self.graph.width, self.graph.height)
        dets: list[Detection] = []
        for index, tensor in result.yolo_outputs:
            layer = self.graph.layers[index]
            dets += decode_head(tensor, layer.head_anchors, layer["classes"], net)
        dets = filter_confidence(dets, self.conf_thresh)
        if self.nms_thresh > 0:
            dets = nms(dets, self.nms_thresh)
        return dets

    def to_pixels(self, det: Detection, img_w: int, img_h: int, image_id: str) -> ImageDetection:
        b = det.box
        cx, cy, w, h = b.cx, b.cy, b.w, b.h
        if self.use_letterbox:
            net_w, net_h = self.graph.width, self.graph.height
            new_w, new_h = letterbox_geometry(img_w, img_h, net_w, net_h)
            cx = (cx - (net_w - new_w) / 2.0 / net_w) / (new_w / net_w)
            cy = (cy - (net_h - new_h) / 2.0 / net_h) / (new_h / net_h)
            w *= net_w / new_w
            h *= net_h / new_h
        return ImageDetection(
            image_id,
            (cx - w / 2) * img_w,
            (cy - h / 2) * img_h,
            w * img_w,
            h * img_h,
            det.best_class,
            det.confidence,
        )

    def detect(self, image: np.ndarray, image_id: str = "") -> list[ImageDetection]:
        """Pixel-space detections ordered by confidence (descending), then index."""
        img_h, img_w = image.shape[2], image.shape[3]
        dets = self.raw_detections(image)
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
        return [self.to_pixels(dets[i], img_w, img_h, image_id) for i in order]
