"""Score-map fusion and per-pixel labeling."""

import numpy as np

from .errors import DimensionError, ValidationError
from .grid import LabelMap, ScoreMap


def softmax(scores, axis=-1):
    """Numerically stable softmax along ``axis`` of a raw array."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_map(scores):
    """Per-pixel class probabilities of a score map."""
    return ScoreMap(softmax(np.asarray(scores.scores, dtype=np.float64)))


def max_fuse(maps):
    """Element-wise maximum over a list of equally shaped score maps.

    Fusion happens on raw scores; apply :func:`softmax_map` afterwards when
    probabilities are needed.
    """
    maps = list(maps)
    if not maps:
        raise ValidationError("max_fuse needs at least one score map")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise DimensionError(f"cannot fuse score maps of shapes {shape} and {m.shape}")
    return ScoreMap(np.maximum.reduce([m.scores for m in maps]))


def argmax_label(scores):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class id
    return LabelMap(np.argmax(scores.scores, axis=-1).astype(np.uint8))
