"""Darknet-style YOLO inference engine and detection evaluation toolkit."""
from .detect import Box, Detection, decode_head, filter_confidence, iou, nms
from .engine import ForwardResult, WeightStore, dump_weights, forward, load_weights, random_init
from .evalkit import EvalReport, GroundTruthBox, build_report, match_detections, parse_annotations
from .netcfg import NetworkGraph, emit_shape_report, load_cfg, parse_cfg, shipped_cfg

__version__ = "0.1.0"
