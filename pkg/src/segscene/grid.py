"""Grid types shared by every stage, plus their on-disk formats.

Coordinates are (row=y, col=x) with y growing downward. Boxes are half-open,
``[x0, x1) x [y0, y1)``.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BoundsError, DimensionError, FormatError, ValidationError

IGNORE = 255

SCORE_MAGIC = b"PXSM"
SCORE_VERSION = 1


def _frozen(array):
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids; ``IGNORE`` marks unannotated pixels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise DimensionError(f"label map must be a non-empty 2-D grid, got shape {labels.shape}")
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValidationError("label values must fit in 0..255")
            labels = labels.astype(np.uint8)
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    def validate(self, num_classes):
        """Raise at the first (row-major) pixel outside ``0..C-1`` and not ignored."""
        bad = (self.labels >= num_classes) & (self.labels != IGNORE)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ValidationError(
                f"label {int(self.labels[y, x])} at (row={y}, col={x}) is not a valid class "
                f"for C={num_classes} and is not IGNORE={IGNORE}"
            )
        return self

    def __eq__(self, other):
        return isinstance(other, LabelMap) and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True)
class ScoreMap:
    """H x W x C real-valued class scores."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores)
        if scores.ndim != 3 or scores.shape[0] < 1 or scores.shape[1] < 1:
            raise DimensionError(f"score map must be H x W x C, got shape {scores.shape}")
        if scores.shape[2] < 2:
            raise ValidationError("score map needs at least two classes")
        if not np.issubdtype(scores.dtype, np.floating):
            scores = scores.astype(np.float64)
        if not np.isfinite(scores).all():
            raise ValidationError("score map contains non-finite values")
        object.__setattr__(self, "scores", _frozen(scores))

    @property
    def height(self):
        return self.scores.shape[0]

    @property
    def width(self):
        return self.scores.shape[1]

    @property
    def num_classes(self):
        return self.scores.shape[2]

    @property
    def shape(self):
        return self.scores.shape

    def __eq__(self, other):
        return isinstance(other, ScoreMap) and np.array_equal(self.scores, other.scores)

    __hash__ = None


@dataclass(frozen=True, order=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def slices(self):
        """Row and column slices selecting this box from a (row, col) array."""
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def within(self, height, width):
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


def spaced_colors(n):
    """``n`` RGB triples with maximally spaced hues (full saturation and value)."""
    colors = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / max(n, 1), 1.0, 1.0)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
    return colors


@dataclass(frozen=True)
class ClassPalette:
    names: tuple
    colors: tuple = field(default=None)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(set(names)) != len(names):
            raise ValidationError("class names must be unique")
        colors = self.colors
        if colors is None:
            colors = spaced_colors(len(names))
        colors = tuple(tuple(int(v) for v in c) for c in colors)
        if len(colors) != len(names):
            raise ValidationError("palette needs exactly one color per class")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    def save(self, path):
        Path(path).write_text("".join(f"{n}\n" for n in self.names), encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"palette file not found: {path}")
        names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
        return cls(tuple(n for n in names if n))


def _check_box(box, height, width):
    if not box.within(height, width):
        raise BoundsError(f"box {box.as_tuple()} exceeds grid of {height}x{width} (rows x cols)")


def crop(grid, box):
    """Copy of the pixels of ``grid`` inside ``box``."""
    _check_box(box, grid.height, grid.width)
    rows, cols = box.slices()
    if isinstance(grid, LabelMap):
        return LabelMap(grid.labels[rows, cols])
    return ScoreMap(grid.scores[rows, cols])


def mirror_horizontal(grid):
    if isinstance(grid, LabelMap):
        return LabelMap(grid.labels[:, ::-1])
    return ScoreMap(grid.scores[:, ::-1])


def interp_matrix(n_in, n_out, mode="bilinear"):
    """Matrix ``R`` (n_out x n_in) resampling a 1-D signal: ``out = R @ signal``.

    Sample centres follow the align-corners-false rule,
    ``src = (i + 0.5) * n_in / n_out - 0.5``, clamped to the valid range, so each
    row sums to one and constants are preserved exactly.
    """
    if n_in < 1 or n_out < 1:
        raise DimensionError("sizes must be >= 1")
    scale = n_in / n_out
    rows = np.arange(n_out)
    R = np.zeros((n_out, n_in))
    if mode == "nearest":
        src = np.minimum(np.floor((rows + 0.5) * scale).astype(int), n_in - 1)
        R[rows, src] = 1.0
        return R
    if mode != "bilinear":
        raise ValidationError(f"unknown resize mode {mode!r}")
    src = np.clip((rows + 0.5) * scale - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    np.add.at(R, (rows, lo), 1.0 - frac)
    np.add.at(R, (rows, hi), frac)
    return R


def resize_array(array, new_h, new_w, mode="bilinear"):
    """Resize the two leading axes of ``array`` independently per trailing channel."""
    if new_h < 1 or new_w < 1:
        raise DimensionError(f"target size must be at least 1x1, got {new_h}x{new_w}")
    h, w = array.shape[:2]
    if (h, w) == (new_h, new_w):
        return np.array(array, copy=True)
    Ry = interp_matrix(h, new_h, mode).astype(array.dtype, copy=False)
    Rx = interp_matrix(w, new_w, mode).astype(array.dtype, copy=False)
    out = np.tensordot(Ry, array, axes=(1, 0))
    out = np.tensordot(Rx, out, axes=(1, 1))
    return np.swapaxes(out, 0, 1)


def resize_scores(scores, new_h, new_w, mode="bilinear"):
    return ScoreMap(resize_array(scores.scores, new_h, new_w, mode))


# --- file formats -----------------------------------------------------------

def write_label_png(labels, path):
    Image.fromarray(np.ascontiguousarray(labels.labels), mode="L").save(path, format="PNG")


def read_label_png(path, num_classes=None):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"label map not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise FormatError(f"{path}: label maps must be 8-bit single channel, got mode {img.mode}")
        labels = LabelMap(np.asarray(img, dtype=np.uint8))
    if num_classes is not None:
        try:
            labels.validate(num_classes)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return labels


def write_rgb_png(image, path):
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_rgb_png(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_scores(scores, path):
    h, w, c = scores.shape
    header = SCORE_MAGIC + bytes([SCORE_VERSION]) + struct.pack("<III", h, w, c)
    body = np.ascontiguousarray(scores.scores, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_scores(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"score file not found: {path}")
    data = path.read_bytes()
    if len(data) < 17 or data[:4] != SCORE_MAGIC:
        raise FormatError(f"{path}: not a score map (bad magic)")
    if data[4] != SCORE_VERSION:
        raise FormatError(f"{path}: unsupported score map version {data[4]}")
    h, w, c = struct.unpack("<III", data[5:17])
    expected = 17 + 4 * h * w * c
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=17).reshape(h, w, c)
    return ScoreMap(values.astype(np.float32))
