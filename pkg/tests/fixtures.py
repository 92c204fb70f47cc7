"""Synthetic on-disk fixtures shared by the CLI and acceptance tests."""
import numpy as np

from darkdet.imageio import encode_ppm

# image name -> ground-truth boxes (x, y, w, h) in pixels
FIXTURE_BOXES = {
    "faces/a": [(8, 8, 20, 24), (40, 36, 16, 16)],
    "faces/b": [(20, 10, 30, 30)],
    "faces/c": [(4, 40, 12, 14), (30, 30, 10, 10), (48, 4, 12, 12)],
}
FIXTURE_SIDE = 64


def synthetic_image(seed: int, side: int = FIXTURE_SIDE) -> np.ndarray:
    """A smooth gradient with a few bright rectangles, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    img = np.stack([xx, yy, 0.5 * (xx + yy)])
    for _ in range(3):
        x, y = rng.integers(0, side - 8, size=2)
        img[:, y:y + 8, x:x + 8] = rng.random((3, 1, 1))
    return img[None].astype(np.float32)


def write_eval_fixture(root, extra_fp: bool = False, missing: str = None):
    """Write images, an image list, annotations and perfect detections.

    Returns a dict of paths. ``extra_fp`` adds one false positive to the
    detections file; ``missing`` names an image to leave off disk.
    """
    (root / "faces").mkdir(parents=True, exist_ok=True)
    ann_lines, det_lines = [], ["# darkdet detections v1"]
    for k, (name, boxes) in enumerate(FIXTURE_BOXES.items()):
        if name != missing:
            (root / f"{name}.ppm").write_bytes(encode_ppm(synthetic_image(k)))
        ann_lines += [f"{name}.jpg", str(len(boxes))]
        ann_lines += [f"{x} {y} {w} {h} 0 0 0 0 0 0" for x, y, w, h in boxes]
        for j, (x, y, w, h) in enumerate(boxes):
            det_lines.append(f"{name}.ppm {x} {y} {w} {h} 0 {0.9 - 0.1 * j}")
    if extra_fp:
        det_lines.append("faces/b.ppm 0 50 6 6 0 0.95")
    paths = {
        "list": root / "images.txt",
        "annotations": root / "annotations.txt",
        "detections": root / "detections.txt",
    }
    paths["list"].write_text("".join(f"{n}.ppm\n" for n in FIXTURE_BOXES))
    paths["annotations"].write_text("\n".join(ann_lines) + "\n")
    paths["detections"].write_text("\n".join(det_lines) + "\n")
    return paths
