"""Scene descriptors computed from a segmentation alone.

Three descriptors are supported: the raw or L2-normalised class histogram,
the thresholded presence ("one-hot") vector, and a two-level spatial pyramid
of five independently normalised histograms.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundsError, DimensionError, FormatError, ValidationError
from .grid import IGNORE, BoundingBox

DEFAULT_DELTA_FRACTION = 0.005


@dataclass(frozen=True)
class HistogramFeature:
    values: np.ndarray
    normalized: bool = False


@dataclass(frozen=True)
class OneHotFeature:
    bits: np.ndarray
    delta: float


def _region_labels(labels, region):
    if region is None:
        return labels.labels
    if not region.within(labels.height, labels.width):
        raise BoundsError(f"region {region.as_tuple()} exceeds {labels.height}x{labels.width} label map")
    rows, cols = region.slices()
    return labels.labels[rows, cols]


def class_histogram(labels, num_classes, region=None):
    """Pixel count of every class inside ``region`` (whole map by default), ignoring 255."""
    values = _region_labels(labels, region).ravel()
    values = values[values != IGNORE]
    if values.size and values.max() >= num_classes:
        raise ValidationError(f"label {int(values.max())} out of range for C={num_classes}")
    counts = np.bincount(values, minlength=num_classes).astype(np.float64)
    return HistogramFeature(counts, normalized=False)


def l2_normalize(feature):
    v = np.asarray(feature.values, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if norm == 0.0:
        return HistogramFeature(v.copy(), normalized=True)
    return HistogramFeature(v / norm, normalized=True)


def one_hot(labels, num_classes, delta_fraction=DEFAULT_DELTA_FRACTION):
    """Presence vector: class ``c`` is on iff its pixel count strictly exceeds delta.

    Delta is ``delta_fraction`` of all pixels in the image, ignored ones included.
    """
    if not 0.0 <= delta_fraction < 1.0:
        raise ValidationError(f"delta_fraction must lie in [0, 1), got {delta_fraction}")
    delta = delta_fraction * labels.height * labels.width
    counts = class_histogram(labels, num_classes).values
    return OneHotFeature((counts > delta).astype(np.float64), delta)


def quadrants(height, width):
    """Top-left, top-right, bottom-left, bottom-right boxes; odd remainders go bottom/right."""
    hy, hx = height // 2, width // 2
    return [
        BoundingBox(0, 0, hx, hy),
        BoundingBox(hx, 0, width, hy),
        BoundingBox(0, hy, hx, height),
        BoundingBox(hx, hy, width, height),
    ]


def spatial_pyramid(labels, num_classes):
    if labels.height < 2 or labels.width < 2:
        raise DimensionError("spatial pyramid needs at least a 2x2 label map")
    blocks = [l2_normalize(class_histogram(labels, num_classes)).values]
    for box in quadrants(labels.height, labels.width):
        blocks.append(l2_normalize(class_histogram(labels, num_classes, box)).values)
    return HistogramFeature(np.concatenate(blocks), normalized=True)


def compute(labels, num_classes, mode, delta_fraction=DEFAULT_DELTA_FRACTION):
    """Feature vector (plain array) for one of the modes ``hist``, ``onehot``, ``pyramid``."""
    if mode == "hist":
        return l2_normalize(class_histogram(labels, num_classes)).values
    if mode == "rawhist":
        return class_histogram(labels, num_classes).values
    if mode == "onehot":
        return one_hot(labels, num_classes, delta_fraction).bits
    if mode == "pyramid":
        return spatial_pyramid(labels, num_classes).values
    raise ValidationError(f"unknown feature mode {mode!r}")


def write_feat(values, path):
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in values), encoding="utf-8")


def read_feat(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"feature file not found: {path}")
    try:
        values = [float(line) for line in path.read_text(encoding="utf-8").split()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not values:
        raise FormatError(f"{path}: empty feature file")
    return np.array(values)
