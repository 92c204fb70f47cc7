"""Command-line entry point: ``darkdet {inspect,detect,eval,compare}``.

Exit codes: 0 success, 1 usage error, 2 input or parse error,
3 undefined metric.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from . import evalkit
from .detect import DEFAULT_CONF_THRESH, DEFAULT_NMS_THRESH
from .engine import load_weights, random_init
from .errors import DarkdetError, UndefinedMetricError
from .imageio import read_image
from .netcfg import emit_shape_report, load_cfg
from .pipeline import Detector

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_METRIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threshold(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"threshold {value} is outside [0, 1]")
    return value


def _input_size(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value <= 0 or value % 32:
        raise argparse.ArgumentTypeError(f"input size must be a positive multiple of 32, got {value}")
    return value


def _add_model_args(p: argparse.ArgumentParser, required_cfg: bool = True) -> None:
    p.add_argument("--cfg", required=required_cfg, help="network configuration file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--weights", help="Darknet binary weights file")
    src.add_argument("--seed", type=int, help="use deterministic random weights from this seed")
    p.add_argument("--size", type=_input_size, help="override network input width and height")
    p.add_argument("--conf-thresh", type=_threshold, default=DEFAULT_CONF_THRESH)
    p.add_argument("--nms-thresh", type=_threshold, default=DEFAULT_NMS_THRESH,
                   help="NMS IoU threshold; 0 disables suppression")
    p.add_argument("--letterbox", action="store_true", help="letterbox instead of stretching")
    p.add_argument("--pillow", action="store_true", help="accept any image format Pillow reads")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="darkdet", description="Darknet-style detector and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="print the layer/shape table of a configuration")
    p.add_argument("cfg_path", nargs="?", metavar="cfg")
    p.add_argument("--cfg", dest="cfg_flag")
    p.add_argument("--size", type=_input_size)

    p = sub.add_parser("detect", help="run detection on one image")
    _add_model_args(p)
    p.add_argument("image")
    p.add_argument("--out", help="write the detection dump here instead of stdout")

    p = sub.add_parser("eval", help="evaluate against WIDER FACE style annotations")
    _add_model_args(p, required_cfg=False)
    p.add_argument("image_list", help="text file with one image path per line")
    p.add_argument("annotations", help="annotation file")
    p.add_argument("--detections-file", help="use these detections instead of running the network")
    p.add_argument("--iou-thresh", type=_threshold, default=evalkit.DEFAULT_EVAL_IOU,
                   help="IoU above which a detection matches ground truth")
    p.add_argument("--ap-method", choices=evalkit.AP_METHODS, default="allpoint")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--pr-out", help="PR curve CSV path")
    p.add_argument("--pr-svg", help="PR curve SVG path")
    p.add_argument("--skip-missing", action="store_true", help="skip unreadable images instead of failing")

    p = sub.add_parser("compare", help="diff two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out")
    return parser


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


def _make_detector(args) -> Detector:
    if args.cfg is None:
        raise UsageError("--cfg is required unless --detections-file is given")
    graph = load_cfg(args.cfg, size=args.size)
    if args.weights is not None:
        weights = load_weights(graph, Path(args.weights).read_bytes())
    elif args.seed is not None:
        weights = random_init(graph, args.seed)
    else:
        raise UsageError("one of --weights or --seed is required")
    return Detector(graph, weights, args.conf_thresh, args.nms_thresh, args.letterbox)


def cmd_inspect(args) -> int:
    path = args.cfg_path or args.cfg_flag
    if path is None:
        raise UsageError("inspect needs a configuration path")
    _write(None, emit_shape_report(load_cfg(path, size=args.size)))
    return EXIT_OK


def cmd_detect(args) -> int:
    detector = _make_detector(args)
    image = read_image(args.image, allow_other_formats=args.pillow)
    dets = detector.detect(image, image_id=args.image)
    _write(args.out, evalkit.format_detections(dets))
    return EXIT_OK


def read_image_list(path) -> list[str]:
    base = Path(path).parent
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries.append(line if Path(line).is_absolute() else str(base / line))
    return entries


def cmd_eval(args) -> int:
    entries = read_image_list(args.image_list)
    records = evalkit.parse_annotation_records(Path(args.annotations).read_text())
    gt_index = {evalkit.image_key(k): v for k, v in records.items()}

    det_index = None
    detector = None
    if args.detections_file:
        det_index = {}
        for d in evalkit.parse_detections(Path(args.detections_file).read_text()):
            det_index.setdefault(evalkit.image_key(d.image_id), []).append(d)
    else:
        detector = _make_detector(args)

    matches = []
    skipped = 0
    for entry in entries:
        gts = evalkit.lookup_by_suffix(entry, gt_index) or []
        if det_index is not None:
            dets = evalkit.lookup_by_suffix(entry, det_index) or []
        else:
            try:
                image = read_image(entry, allow_other_formats=args.pillow)
            except DarkdetError as exc:
                if not args.skip_missing:
                    raise
                print(f"darkdet: skipping {entry}: {exc}", file=sys.stderr)
                skipped += 1
                continue
            dets = detector.detect(image, image_id=entry)
        matches.append(evalkit.match_detections(dets, gts, args.iou_thresh, image_id=entry))

    report = evalkit.build_report(matches, args.iou_thresh, args.ap_method, skipped_images=skipped)
    _write(args.out, report.to_json() if args.format == "json" else report.to_text())
    if args.pr_out:
        Path(args.pr_out).write_text(evalkit.emit_pr_curve(report))
    if args.pr_svg:
        label = Path(args.cfg).stem if args.cfg else "detections"
        Path(args.pr_svg).write_text(evalkit.pr_curve_svg({label: report.pr}))
    return EXIT_OK


def cmd_compare(args) -> int:
    a = evalkit.EvalReport.loads(Path(args.report_a).read_text())
    b = evalkit.EvalReport.loads(Path(args.report_b).read_text())
    names = (Path(args.report_a).stem, Path(args.report_b).stem)
    _write(args.out, evalkit.compare_reports(a, b, names))
    return EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "detect": cmd_detect, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"darkdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UndefinedMetricError as exc:
        print(f"darkdet: undefined metric: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (DarkdetError, OSError) as exc:
        print(f"darkdet: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
