"""Detection evaluation: WIDER FACE annotations, greedy matching, Recall /
mAP / mean IoU / proposals-per-image, PR curves and report files."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Iterable, Optional, Sequence

import numpy as np

from .detect import iou_matrix
from .errors import AnnotationError, ReportError, UndefinedMetricError

REPORT_FORMAT_VERSION = 1
AP_METHODS = ("allpoint", "11point")
DEFAULT_EVAL_IOU = 0.25

# WIDER FACE attribute columns following x y w h
FLAG_NAMES = ("blur", "expression", "illumination", "invalid", "occlusion", "pose")


@dataclass(frozen=True)
class GroundTruthBox:
    """One annotated box in pixel corner format (top-left x, y plus size)."""

    image_id: str
    x: float
    y: float
    w: float
    h: float
    flags: tuple[int, ...] = ()
    class_id: int = 0

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("ground-truth box needs a non-empty image_id")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box size {self.w}x{self.h} for {self.image_id}")

    def flag(self, name: str) -> int:
        i = FLAG_NAMES.index(name)
        return self.flags[i] if i < len(self.flags) else 0

    @property
    def invalid(self) -> bool:
        return bool(self.flag("invalid"))

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)


@dataclass(frozen=True)
class ImageDetection:
    """A detection already mapped to pixel corner format for one image."""

    image_id: str
    x: float
    y: float
    w: float
    h: float
    class_id: int
    confidence: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)


# ---------------------------------------------------------------- annotations

def _int_fields(line: str) -> Optional[list[int]]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        return None


def parse_annotation_records(text: str) -> "OrderedDict[str, list[GroundTruthBox]]":
    """Parse WIDER FACE style annotations, keeping images with no boxes.

    Each record is an image path line, a count line, then ``count`` lines of
    ``x y w h [flags...]``. A record with count 0 is followed by a single
    placeholder box line, which is skipped.
    """
    lines = text.splitlines()
    records: "OrderedDict[str, list[GroundTruthBox]]" = OrderedDict()
    i = 0
    n = len(lines)
    while i < n:
        image_id = lines[i].strip()
        if not image_id:
            i += 1
            continue
        path_line = i + 1
        i += 1
        if i >= n:
            raise AnnotationError(f"record for {image_id!r} has no count line", path_line)
        count_fields = _int_fields(lines[i])
        if count_fields is None or len(count_fields) != 1 or count_fields[0] < 0:
            raise AnnotationError(f"malformed box count {lines[i].strip()!r}", i + 1)
        count = count_fields[0]
        i += 1
        boxes = records.setdefault(image_id, [])
        if count == 0:
            if i < n and (ph := _int_fields(lines[i])) is not None and len(ph) >= 4:
                i += 1
            continue
        for _ in range(count):
            if i >= n:
                raise AnnotationError(
                    f"record for {image_id!r} ends after {len(boxes)} of {count} boxes", i
                )
            vals = _int_fields(lines[i])
            if vals is None or len(vals) < 4:
                raise AnnotationError(f"expected 'x y w h [flags]', got {lines[i].strip()!r}", i + 1)
            x, y, w, h, *flags = vals
            if w < 0 or h < 0:
                raise AnnotationError(f"negative box size in {lines[i].strip()!r}", i + 1)
            boxes.append(GroundTruthBox(image_id, x, y, w, h, tuple(flags)))
            i += 1
    return records


def parse_annotations(text: str) -> list[GroundTruthBox]:
    return [b for boxes in parse_annotation_records(text).values() for b in boxes]


def image_key(path: str) -> str:
    """Normalize an image reference for matching: forward slashes, no extension."""
    p = path.strip().replace("\\", "/")
    base = p.rsplit("/", 1)[-1]
    if "." in base:
        p = p[: len(p) - len(base) + base.rindex(".")]
    while p.startswith("./"):
        p = p[2:]
    return p


def lookup_by_suffix(path: str, table: dict):
    """Find ``table[k]`` where ``k`` is the longest path suffix of ``path`` present."""
    parts = image_key(path).split("/")
    for k in range(len(parts)):
        cand = "/".join(parts[k:])
        if cand in table:
            return table[cand]
    return None


# ---------------------------------------------------------------- matching

@dataclass
class MatchResult:
    """Outcome of matching one image's detections to its ground truth.

    Lists indexed by detection follow the input detection order.
    """

    image_id: str
    confidences: list[float]
    classes: list[int]
    is_tp: list[bool]
    tp_iou: list[Optional[float]]
    gt_matched_by: list[Optional[int]]
    gt_classes: list[int] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def n_gt(self) -> int:
        return len(self.gt_matched_by)

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def confidence_order(confidences: Sequence[float]) -> list[int]:
    """Indices by descending confidence, earlier index first on ties."""
    return sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))


def match_detections(
    dets: Sequence[ImageDetection],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float = DEFAULT_EVAL_IOU,
    image_id: Optional[str] = None,
) -> MatchResult:
    """Greedy matching in descending confidence order.

    Each detection claims the unmatched same-class ground truth with the
    highest IoU (lowest index on ties) if that IoU exceeds the threshold;
    otherwise it is a false positive. Ground truth flagged invalid is ignored.
    """
    gts = [g for g in gts if not g.invalid]
    if image_id is None:
        image_id = dets[0].image_id if dets else (gts[0].image_id if gts else "")
    conf = [float(d.confidence) for d in dets]
    classes = [int(d.class_id) for d in dets]
    is_tp = [False] * len(dets)
    tp_iou: list[Optional[float]] = [None] * len(dets)
    matched_by: list[Optional[int]] = [None] * len(gts)
    if dets and gts:
        ious = iou_matrix([d.corners() for d in dets], [g.corners() for g in gts])
        gt_cls = np.array([g.class_id for g in gts])
        for i in confidence_order(conf):
            cand = np.where(
                (gt_cls == classes[i]) & np.array([m is None for m in matched_by]),
                ious[i], -1.0,
            )
            j = int(np.argmax(cand))
            if cand[j] > iou_threshold:
                is_tp[i] = True
                tp_iou[i] = float(cand[j])
                matched_by[j] = i
    return MatchResult(image_id, conf, classes, is_tp, tp_iou, matched_by, [g.class_id for g in gts])


# ---------------------------------------------------------------- metrics

def recall(tp: int, fn: int) -> float:
    """Recall as a percentage: 100 * TP / (TP + FN)."""
    if tp + fn <= 0:
        raise UndefinedMetricError("recall is undefined without ground truth (TP + FN = 0)")
    return 100.0 * tp / (tp + fn)


def _ranked_flags(outcomes) -> list[bool]:
    outcomes = list(outcomes)
    if outcomes and isinstance(outcomes[0], (tuple, list)):
        order = confidence_order([float(c) for c, _ in outcomes])
        return [bool(outcomes[i][1]) for i in order]
    return [bool(o) for o in outcomes]


def pr_points(outcomes, gt_count: int) -> list[tuple[float, float]]:
    """(recall, precision) after each ranked detection.

    ``outcomes`` is either ``(confidence, is_tp)`` pairs, which are ranked
    here, or plain TP flags already in rank order. Recall is a fraction.
    """
    if gt_count <= 0:
        raise UndefinedMetricError("precision-recall curve needs at least one ground-truth box")
    flags = np.array(_ranked_flags(outcomes), dtype=bool)
    if flags.size == 0:
        return []
    cum_tp = np.cumsum(flags)
    rec = cum_tp / gt_count
    prec = cum_tp / np.arange(1, flags.size + 1)
    return list(zip(rec.tolist(), prec.tolist()))


def average_precision(outcomes, gt_count: int, method: str = "allpoint") -> float:
    """Area under the interpolated precision-recall curve, in [0, 1].

    ``allpoint`` integrates the monotone precision envelope over every
    recall step; ``11point`` averages the envelope at recall 0, 0.1, ..., 1.
    """
    if method not in AP_METHODS:
        raise ValueError(f"unknown AP method {method!r}; expected one of {AP_METHODS}")
    points = pr_points(outcomes, gt_count)
    if not points:
        return 0.0
    rec = np.array([p[0] for p in points])
    prec = np.array([p[1] for p in points])
    if method == "11point":
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = prec[rec >= t - 1e-12]
            total += above.max() if above.size else 0.0
        return float(total / 11.0)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_average_precision(aps: Sequence[float]) -> float:
    """mAP as a percentage over the evaluated classes."""
    aps = list(aps)
    if not aps:
        raise UndefinedMetricError("mAP is undefined for an empty class list")
    return 100.0 * sum(aps) / len(aps)


def rps_per_img(total_proposals: int, image_count: int) -> float:
    if image_count <= 0:
        raise UndefinedMetricError("proposals per image is undefined for zero images")
    return total_proposals / image_count


def avg_iou(matches: Iterable[MatchResult]) -> float:
    """Mean IoU over true positives, as a percentage."""
    values = [v for m in matches for v in m.tp_iou if v is not None]
    if not values:
        raise UndefinedMetricError("mean IoU is undefined without true positives")
    return 100.0 * float(np.mean(values))


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    ap_method: str
    iou_threshold: float
    images: int
    gt_boxes: int
    proposals: int
    true_positives: int
    recall_pct: float
    map_pct: float
    avg_iou_pct: Optional[float]  # None when there are no true positives
    rps_per_img: float
    class_aps: dict[int, float]
    pr: list[tuple[float, float]]
    skipped_images: int = 0
    format_version: int = REPORT_FORMAT_VERSION

    # -- text
    def to_text(self) -> str:
        lines = [
            "# darkdet evaluation report",
            f"format_version: {self.format_version}",
            f"ap_method: {self.ap_method}",
            f"iou_threshold: {self.iou_threshold!r}",
            f"images: {self.images}",
            f"skipped_images: {self.skipped_images}",
            f"gt_boxes: {self.gt_boxes}",
            f"proposals: {self.proposals}",
            f"true_positives: {self.true_positives}",
            f"recall_pct: {self.recall_pct!r}",
            f"map_pct: {self.map_pct!r}",
            f"avg_iou_pct: {'n/a' if self.avg_iou_pct is None else repr(self.avg_iou_pct)}",
            f"rps_per_img: {self.rps_per_img!r}",
        ]
        lines += [f"ap.{c}: {ap!r}" for c, ap in sorted(self.class_aps.items())]
        lines.append("[pr]")
        lines.append(emit_pr_curve(self).rstrip("\n"))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        head, sep, pr_text = text.partition("\n[pr]\n")
        if not sep:
            raise ReportError("report has no [pr] section")
        kv: dict[str, str] = {}
        for line in head.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, colon, value = line.partition(":")
            if not colon:
                raise ReportError(f"malformed report line {line!r}")
            kv[key.strip()] = value.strip()
        _check_version(kv.get("format_version"))
        try:
            pr = []
            for row in pr_text.splitlines()[1:]:
                if row.strip():
                    r, p = row.split(",")
                    pr.append((float(r), float(p)))
            return cls(
                ap_method=kv["ap_method"],
                iou_threshold=float(kv["iou_threshold"]),
                images=int(kv["images"]),
                gt_boxes=int(kv["gt_boxes"]),
                proposals=int(kv["proposals"]),
                true_positives=int(kv["true_positives"]),
                recall_pct=float(kv["recall_pct"]),
                map_pct=float(kv["map_pct"]),
                avg_iou_pct=None if kv["avg_iou_pct"] == "n/a" else float(kv["avg_iou_pct"]),
                rps_per_img=float(kv["rps_per_img"]),
                class_aps={int(k[3:]): float(v) for k, v in kv.items() if k.startswith("ap.")},
                pr=pr,
                skipped_images=int(kv.get("skipped_images", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise ReportError(f"malformed report: {exc}") from exc

    # -- json
    def to_json(self) -> str:
        d = asdict(self)
        d["class_aps"] = {str(k): v for k, v in sorted(self.class_aps.items())}
        d["pr"] = [list(p) for p in self.pr]
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportError(f"malformed JSON report: {exc}") from exc
        _check_version(d.get("format_version"))
        try:
            d["class_aps"] = {int(k): float(v) for k, v in d["class_aps"].items()}
            d["pr"] = [tuple(p) for p in d["pr"]]
            return cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed JSON report: {exc}") from exc

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        """Parse either serialization."""
        return cls.from_json(text) if text.lstrip().startswith("{") else cls.from_text(text)


def _check_version(value) -> None:
    if value is None:
        raise ReportError("report carries no format_version")
    try:
        version = int(value)
    except (TypeError, ValueError):
        raise ReportError(f"unreadable format_version {value!r}") from None
    if version != REPORT_FORMAT_VERSION:
        raise ReportError(
            f"report format_version {version} is not supported (expected {REPORT_FORMAT_VERSION})"
        )


def _pooled(matches: Sequence[MatchResult], cls_filter=None) -> list[tuple[float, bool]]:
    """Every detection as (confidence, is_tp), in image order then detection order."""
    out = []
    for m in matches:
        for conf, c, tp in zip(m.confidences, m.classes, m.is_tp):
            if cls_filter is None or c == cls_filter:
                out.append((conf, tp))
    return out


def build_report(
    matches: Sequence[MatchResult],
    iou_threshold: float = DEFAULT_EVAL_IOU,
    ap_method: str = "allpoint",
    skipped_images: int = 0,
) -> EvalReport:
    """Aggregate per-image matches, in image order, into an EvalReport.

    mAP averages over the classes that have ground truth. Mean IoU is
    reported as ``None`` when nothing matched.
    """
    matches = list(matches)
    images = len(matches)
    gt_total = sum(m.n_gt for m in matches)
    tp_total = sum(m.tp for m in matches)
    proposals = sum(len(m.confidences) for m in matches)

    rps = rps_per_img(proposals, images)
    rec = recall(tp_total, gt_total - tp_total)
    gt_classes = sorted({c for m in matches for c in m.gt_classes})
    class_aps = {}
    for c in gt_classes:
        n_gt = sum(m.gt_classes.count(c) for m in matches)
        class_aps[c] = average_precision(_pooled(matches, c), n_gt, ap_method)
    mean_ap = mean_average_precision(list(class_aps.values()))
    mean_iou = avg_iou(matches) if tp_total else None

    return EvalReport(
        ap_method=ap_method,
        iou_threshold=float(iou_threshold),
        images=images,
        gt_boxes=gt_total,
        proposals=proposals,
        true_positives=tp_total,
        recall_pct=rec,
        map_pct=mean_ap,
        avg_iou_pct=mean_iou,
        rps_per_img=rps,
        class_aps=class_aps,
        pr=pr_points(_pooled(matches), gt_total),
        skipped_images=skipped_images,
    )


def emit_pr_curve(report: EvalReport) -> str:
    """CSV with a ``recall,precision`` header, recall non-decreasing."""
    rows = ["recall,precision"] + [f"{r!r},{p!r}" for r, p in report.pr]
    return "\n".join(rows) + "\n"


def pr_curve_svg(curves: dict[str, Sequence[tuple[float, float]]], size: int = 400) -> str:
    """Render one or more PR curves as a standalone SVG document."""
    margin = 40
    span = size - 2 * margin
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")

    def xy(r, p):
        return f"{margin + r * span:.2f},{margin + (1 - p) * span:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#000"/>',
        f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-size="12">Recall</text>',
        f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2:.0f})">Precision</text>',
    ]
    for k, (label, pts) in enumerate(curves.items()):
        color = colors[k % len(colors)]
        if pts:
            path = " ".join(xy(r, p) for r, p in pts)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        parts.append(
            f'<text x="{margin + 8}" y="{margin + 16 + 14 * k}" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------- comparison

COMPARE_ROWS = (
    ("mAP", "map_pct"),
    ("Recall", "recall_pct"),
    ("IoU", "avg_iou_pct"),
    ("RPs/Img", "rps_per_img"),
)


def metric_delta(a: Optional[float], b: Optional[float]) -> Optional[Decimal]:
    """``b - a`` computed on the shortest decimal form of each value."""
    if a is None or b is None:
        return None
    return Decimal(repr(float(b))) - Decimal(repr(float(a)))


def compare_reports(a: EvalReport, b: EvalReport, names=("A", "B")) -> str:
    """Side-by-side metrics with signed deltas (second minus first)."""
    width = max(10, *(len(n) for n in names))
    rows = [f"{'metric':<8}  {names[0]:>{width}}  {names[1]:>{width}}  {'delta':>{width}}"]
    for label, attr in COMPARE_ROWS:
        va, vb = getattr(a, attr), getattr(b, attr)
        d = metric_delta(va, vb)
        fa = "n/a" if va is None else repr(va)
        fb = "n/a" if vb is None else repr(vb)
        fd = "n/a" if d is None else format(d.normalize(), "+f")
        rows.append(f"{label:<8}  {fa:>{width}}  {fb:>{width}}  {fd:>{width}}")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- detection files

DETECTIONS_HEADER = "# darkdet detections v1\n# image x y w h class confidence\n"


def format_detections(dets: Iterable[ImageDetection]) -> str:
    """One whitespace-separated record per detection, pixel corner format."""
    rows = [
        f"{d.image_id} {d.x!r} {d.y!r} {d.w!r} {d.h!r} {d.class_id} {d.confidence!r}"
        for d in dets
    ]
    return DETECTIONS_HEADER + "".join(r + "\n" for r in rows)


def parse_detections(text: str) -> list[ImageDetection]:
    """Inverse of :func:`format_detections`. Image ids may contain spaces."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.rsplit(None, 6)
        if len(parts) != 7:
            raise AnnotationError(f"expected 'image x y w h class confidence', got {line!r}", lineno)
        try:
            x, y, w, h = (float(v) for v in parts[1:5])
            det = ImageDetection(parts[0], x, y, w, h, int(parts[5]), float(parts[6]))
        except ValueError:
            raise AnnotationError(f"non-numeric field in {line!r}", lineno) from None
        out.append(det)
    return out
