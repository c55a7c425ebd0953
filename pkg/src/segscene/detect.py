"""Object boxes from a segmentation.

Every 8-connected component of a class mask becomes one tight box. Its score
is the mean class-``c`` confidence over the label-``c`` pixels inside the box.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, FormatError, ValidationError
from .grid import BoundingBox

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BoundingBox
    score: float
    pixel_count: int


def connected_components(mask):
    """List of ``(pixel_mask, box)`` pairs, in raster order of each component's first pixel."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionError("mask must be 2-D")
    labelled, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    out = []
    for k, slc in enumerate(ndimage.find_objects(labelled), start=1):
        rows, cols = slc
        box = BoundingBox(cols.start, rows.start, cols.stop, rows.stop)
        out.append((labelled == k, box))
    return out


def detect_objects(labels, confidences, object_classes, min_area=0):
    """Detections for every component of every class in ``object_classes``.

    ``confidences`` is an H x W x C array or ScoreMap, normally softmax
    probabilities of the fused scores.
    """
    conf = getattr(confidences, "scores", confidences)
    conf = np.asarray(conf)
    lab = labels.labels
    if conf.ndim != 3 or conf.shape[:2] != lab.shape:
        raise DimensionError(f"labels {lab.shape} and confidences {conf.shape} disagree in size")
    detections = []
    for c in sorted(object_classes):
        if not 0 <= c < conf.shape[2]:
            raise ValidationError(f"object class {c} outside 0..{conf.shape[2] - 1}")
        is_c = lab == c
        channel = conf[:, :, c]
        for pixels, box in connected_components(is_c):
            if pixels.sum() < min_area:
                continue
            rows, cols = box.slices()
            inside = is_c[rows, cols]
            count = int(inside.sum())
            score = float(np.sum(channel[rows, cols][inside], dtype=np.float64) / count)
            detections.append(Detection(int(c), box, score, count))
    return detections


def write_detections(detections, path):
    lines = [f"{d.class_id} {d.box.x0} {d.box.y0} {d.box.x1} {d.box.y1} {d.score!r}\n" for d in detections]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_detections(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"detection file not found: {path}")
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"{path}:{n}: expected 'class x0 y0 x1 y1 score'")
        c, x0, y0, x1, y1 = (int(p) for p in parts[:5])
        out.append(Detection(c, BoundingBox(x0, y0, x1, y1), float(parts[5]), 0))
    return out


def ground_truth_boxes(labels, object_classes):
    """``{class: [BoundingBox, ...]}`` from a ground-truth label map (ignored pixels never form boxes)."""
    return {c: [box for _, box in connected_components(labels.labels == c)] for c in object_classes}
