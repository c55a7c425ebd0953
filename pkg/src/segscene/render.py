"""Colour-coded label overlays and box overlays as RGB arrays."""

import warnings

import numpy as np

from .errors import DimensionError, ValidationError
from .grid import IGNORE

GT_COLOR = (0, 255, 0)
PRED_COLOR = (0, 0, 255)


def render_labels(labels, palette, base=None):
    """Paint each class its palette colour (IGNORE black), optionally blended 50/50 over ``base``."""
    lab = labels.labels
    used = lab[lab != IGNORE]
    if used.size and int(used.max()) >= len(palette):
        raise ValidationError(f"palette has {len(palette)} colours but the map uses class {int(used.max())}")
    table = np.zeros((256, 3), dtype=np.uint8)
    table[: len(palette)] = np.asarray(palette.colors, dtype=np.uint8)
    table[IGNORE] = 0
    out = table[lab]
    if base is not None:
        base = np.asarray(base, dtype=np.uint8)
        if base.shape != out.shape:
            raise DimensionError(f"base image {base.shape} does not match label map {out.shape}")
        out = np.round(0.5 * out.astype(np.float64) + 0.5 * base).astype(np.uint8)
    return out


def _clamp(box, h, w):
    x0, y0, x1, y1 = max(box.x0, 0), max(box.y0, 0), min(box.x1, w), min(box.y1, h)
    if (x0, y0, x1, y1) != box.as_tuple():
        warnings.warn(f"box {box.as_tuple()} clamped to the {h}x{w} image", stacklevel=3)
    return x0, y0, x1, y1


def draw_box(image, box, color):
    h, w = image.shape[:2]
    x0, y0, x1, y1 = _clamp(box, h, w)
    if x0 >= x1 or y0 >= y1:
        return image
    image[y0, x0:x1] = color
    image[y1 - 1, x0:x1] = color
    image[y0:y1, x0] = color
    image[y0:y1, x1 - 1] = color
    return image


def render_detections(image, detections, gt_boxes=None):
    """Outline ground-truth boxes in green, then predictions in blue (drawn last)."""
    out = np.array(image, dtype=np.uint8, copy=True)
    for box in gt_boxes or ():
        draw_box(out, box, GT_COLOR)
    for det in detections:
        draw_box(out, getattr(det, "box", det), PRED_COLOR)
    return out
