"""ToyRooms: a synthetic indoor-scene dataset with exact ground truth.

Each image is a wall/floor split with a few flat-coloured rectangles and
ellipses on top. Objects never touch (a one-pixel gap is kept around every
object), so each placed object is exactly one 8-connected component and its
placement box is the tight box of that component. A one-pixel ring of IGNORE
labels borders every label map.

The scene of an image is a pure function of which object classes are present.
"""

from __future__ import annotations

import colorsys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, ValidationError
from .grid import IGNORE, BoundingBox, ClassPalette, LabelMap, read_label_png, write_label_png, write_rgb_png

STRUCTURE_NAMES = ("wall", "floor")
OBJECT_NAMES = ("bed", "stove", "desk", "toilet", "chair", "lamp")
SCENE_NAMES = ("bedroom", "kitchen", "office", "bathroom")
FALLBACK_SCENE = "other"

# Chosen so that the five default scenes come out roughly equally frequent.
DEFAULT_CLASS_WEIGHTS = (0.09, 0.11, 0.14, 0.21, 0.225, 0.225)


def substream(seed, *names):
    """Independent generator for a named stage derived from one master seed."""
    keys = [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])


@dataclass(frozen=True)
class ToyRoomsConfig:
    size: int = 64
    num_object_classes: int = 6
    num_structure_classes: int = 2
    objects_per_image: tuple = (1, 4)
    noise_std: float = 0.05
    seed: int = 0
    num_train: int = 500
    num_test: int = 200
    class_weights: tuple = None
    object_size: tuple = None
    max_retries: int = 200

    def __post_init__(self):
        if self.num_structure_classes < 1:
            raise ValidationError("need at least one structure class")
        if self.num_classes > 254:
            raise ValidationError("at most 254 classes fit below the IGNORE value")
        lo, hi = self.objects_per_image
        if not 0 <= lo <= hi:
            raise ValidationError(f"invalid objects-per-image range {self.objects_per_image}")
        if self.size < 16:
            raise ValidationError("images must be at least 16x16")
        if self.weights.shape != (self.num_object_classes,):
            raise ValidationError("need one class weight per object class")

    @property
    def num_classes(self):
        return self.num_structure_classes + self.num_object_classes

    @property
    def object_class_ids(self):
        return tuple(range(self.num_structure_classes, self.num_classes))

    @property
    def weights(self):
        w = self.class_weights
        if w is None:
            if self.num_object_classes == len(DEFAULT_CLASS_WEIGHTS):
                w = DEFAULT_CLASS_WEIGHTS
            else:
                w = (1.0,) * self.num_object_classes
        w = np.asarray(w, dtype=np.float64)
        return w / w.sum() if w.sum() > 0 else w

    @property
    def size_range(self):
        if self.object_size is not None:
            return tuple(self.object_size)
        # smallest ellipse must still clear the default 0.5% presence threshold
        lo = max(6, int(np.ceil(0.1 * self.size)))
        return lo, max(lo + 1, self.size // 4)

    def palette(self):
        names = list(STRUCTURE_NAMES[: self.num_structure_classes])
        names += [f"structure{k}" for k in range(len(names), self.num_structure_classes)]
        objects = list(OBJECT_NAMES[: self.num_object_classes])
        objects += [f"object{k}" for k in range(len(objects), self.num_object_classes)]
        return ClassPalette(tuple(names + objects))


@dataclass(frozen=True)
class SceneRule:
    """Ordered ``(required object classes, scene id)`` rules; the first rule whose
    required set is contained in the presence set wins, otherwise ``fallback``."""

    rules: tuple
    scene_names: tuple
    fallback: int

    def __post_init__(self):
        ids = [sid for _, sid in self.rules] + [self.fallback]
        if any(not 0 <= s < len(self.scene_names) for s in ids):
            raise ValidationError("scene ids must index scene_names")

    @property
    def num_scenes(self):
        return len(self.scene_names)

    def scene_of(self, present):
        present = set(present)
        for required, scene in self.rules:
            if set(required) <= present:
                return scene
        return self.fallback

    @classmethod
    def default(cls, config=None):
        config = config or ToyRoomsConfig()
        distinguished = config.object_class_ids[: len(SCENE_NAMES)]
        rules = tuple((frozenset([c]), k) for k, c in enumerate(distinguished))
        names = SCENE_NAMES[: len(distinguished)] + (FALLBACK_SCENE,)
        return cls(rules, names, len(distinguished))

    def save(self, path):
        Path(path).write_text("".join(f"{n}\n" for n in self.scene_names), encoding="utf-8")


def presence_from_labels(labels, object_classes):
    present = np.unique(labels.labels)
    return {int(c) for c in present if int(c) in set(object_classes)}


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    labels: LabelMap
    scene: int
    objects: tuple  # (class id, BoundingBox) per placed object


def _class_colors(config):
    colors = [(0.78, 0.74, 0.64), (0.42, 0.30, 0.22)]
    colors += [(0.3 + 0.15 * k, 0.3 + 0.15 * k, 0.6) for k in range(2, config.num_structure_classes)]
    n = config.num_object_classes
    for k in range(n):
        colors.append(colorsys.hsv_to_rgb(k / n, 0.85, 0.9))
    return np.asarray(colors[: config.num_classes])


def _shape_mask(kind, h, w):
    if kind == "rect":
        return np.ones((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    return ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0


def generate_sample(config, rule, rng, index=0):
    S = config.size
    labels = np.empty((S, S), dtype=np.uint8)
    horizon = int(rng.integers(int(0.3 * S), int(0.7 * S) + 1))
    labels[:horizon] = 0
    labels[horizon:] = 1 if config.num_structure_classes > 1 else 0

    taken = np.zeros((S, S), dtype=bool)
    lo, hi = config.objects_per_image
    n_objects = int(rng.integers(lo, hi + 1))
    smin, smax = config.size_range
    objects = []
    for _ in range(n_objects):
        c = config.object_class_ids[int(rng.choice(config.num_object_classes, p=config.weights))]
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        for _attempt in range(config.max_retries):
            h = int(rng.integers(smin, smax + 1))
            w = int(rng.integers(smin, smax + 1))
            # keep objects off the ignore ring
            y0 = int(rng.integers(1, S - 1 - h + 1))
            x0 = int(rng.integers(1, S - 1 - w + 1))
            if not taken[y0 - 1:y0 + h + 1, x0 - 1:x0 + w + 1].any():
                break
        else:
            raise GenerationError(f"could not place object {len(objects)} in image {index} "
                                  f"after {config.max_retries} attempts")
        mask = _shape_mask(kind, h, w)
        labels[y0:y0 + h, x0:x0 + w][mask] = c
        taken[y0:y0 + h, x0:x0 + w] = True
        rows, cols = np.nonzero(mask)
        box = BoundingBox(x0 + cols.min(), y0 + rows.min(), x0 + cols.max() + 1, y0 + rows.max() + 1)
        objects.append((c, box))

    colors = _class_colors(config)
    image = colors[labels] + rng.normal(0.0, config.noise_std, size=(S, S, 3))
    image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)

    labels[0, :] = labels[-1, :] = labels[:, 0] = labels[:, -1] = IGNORE
    present = {c for c, _ in objects}
    return Sample(image, LabelMap(labels), rule.scene_of(present), tuple(objects))


def generate_samples(config, rule, split, count=None):
    """Yield ``count`` samples of ``split``; every image has its own random substream."""
    if count is None:
        count = config.num_train if split == "train" else config.num_test
    for i in range(count):
        yield generate_sample(config, rule, substream(config.seed, "data", split, i), index=i)


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    label_path: str
    scene: int
    objects: tuple = field(default=(), compare=False)


@dataclass
class DatasetManifest:
    records: list
    split: str
    palette: ClassPalette
    scene_names: tuple
    root: Path = field(default=None, compare=False)

    def __len__(self):
        return len(self.records)

    def resolve(self, relpath):
        return Path(self.root) / relpath

    def labels(self, i):
        return read_label_png(self.resolve(self.records[i].label_path), len(self.palette))

    def save(self, path):
        lines = [f"{r.image_path}\t{r.label_path}\t{r.scene}\n" for r in self.records]
        Path(path).write_text("".join(lines), encoding="utf-8")


def generate(config, rule=None, out_dir=None):
    """Write both splits under ``out_dir``; returns ``(train, test)`` manifests."""
    rule = rule or SceneRule.default(config)
    if out_dir is None:
        raise ValidationError("an output directory is required")
    out = Path(out_dir)
    palette = config.palette()
    out.mkdir(parents=True, exist_ok=True)
    palette.save(out / "palette.txt")
    rule.save(out / "scenes.txt")
    manifests = []
    for split in ("train", "test"):
        (out / split).mkdir(exist_ok=True)
        records = []
        for i, sample in enumerate(generate_samples(config, rule, split)):
            image_rel = f"{split}/{i:05d}_rgb.png"
            label_rel = f"{split}/{i:05d}_label.png"
            write_rgb_png(sample.image, out / image_rel)
            write_label_png(sample.labels, out / label_rel)
            records.append(ManifestRecord(image_rel, label_rel, sample.scene, sample.objects))
        manifest = DatasetManifest(records, split, palette, rule.scene_names, out)
        manifest.save(out / f"{split}.manifest")
        manifests.append(manifest)
    return tuple(manifests)


def load_manifest(path, validate=True):
    """Read a manifest plus the ``palette.txt`` / ``scenes.txt`` next to it."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    root = path.parent
    palette = ClassPalette.load(root / "palette.txt")
    scenes_file = root / "scenes.txt"
    scene_names = tuple(l.strip() for l in scenes_file.read_text(encoding="utf-8").splitlines() if l.strip()) \
        if scenes_file.exists() else ()
    records = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{n}: expected image_path<TAB>label_path<TAB>scene_id")
        try:
            scene = int(parts[2])
        except ValueError:
            raise ValidationError(f"{path}:{n}: scene id {parts[2]!r} is not an integer") from None
        if scene < 0 or (scene_names and scene >= len(scene_names)):
            raise ValidationError(f"{path}:{n}: scene id {scene} out of range")
        records.append(ManifestRecord(parts[0], parts[1], scene))
    manifest = DatasetManifest(records, path.stem, palette, scene_names, root)
    if validate:
        for r in records:
            if not manifest.resolve(r.image_path).exists():
                raise ValidationError(f"image not found: {manifest.resolve(r.image_path)}")
            read_label_png(manifest.resolve(r.label_path), len(palette))
    return manifest
