"""End-to-end run: data -> train-seg -> segment -> scene variants -> detect -> eval -> report.

Every stage draws randomness from its own named substream of the run seed, so
a stage re-run from saved artifacts gives the same bytes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import detect, evaluation, features, plots, svm, toynet
from .data import SceneRule, ToyRoomsConfig, generate, load_manifest
from .errors import ValidationError
from .grid import IGNORE, LabelMap, ScoreMap, read_rgb_png, write_label_png, write_scores
from .labeling import softmax

log = logging.getLogger(__name__)

# name -> (feature mode, kernel)
SCENE_VARIANTS = {
    "hist_linear": ("hist", "linear"),
    "onehot_linear": ("onehot", "linear"),
    "hist_kernel": ("hist", "jensen_shannon"),
    "pyramid_kernel": ("pyramid", "jensen_shannon"),
}


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _parse_bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


@dataclass
class PipelineConfig:
    seed: int = 0
    data_dir: str = ""
    size: int = 64
    classes: int = 8
    train: int = 500
    test: int = 200
    iters: int = 2000
    lr: float = 0.001
    power: float = 0.9
    momentum: float = 0.9
    crop: int = 48
    mirror: float = 0.5
    scales: tuple = toynet.DEFAULT_SCALES
    delta: float = features.DEFAULT_DELTA_FRACTION
    svm_C: float = 1.0
    svm_tol: float = 1e-4
    scene_variants: tuple = tuple(SCENE_VARIANTS)
    labels_from_gt: bool = False
    raw_scores: bool = False
    min_area: int = 0
    figures: bool = True

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        known = {f.name: f for f in fields(cls)}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ValidationError(f"config line {n}: unknown key {key!r}")
            setattr(cfg, key, cfg._convert(key, value))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def _convert(self, key, value):
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                return _parse_bool(value)
            if isinstance(current, int):
                return int(value)
            if isinstance(current, float):
                return float(value)
            if key == "scales":
                return tuple(float(v) for v in value.split(","))
            if key == "scene_variants":
                return tuple(v.strip() for v in value.split(",") if v.strip())
        except ValueError:
            raise ValidationError(f"bad value for {key}: {value!r}") from None
        return value

    def validate(self):
        unknown = [v for v in self.scene_variants if v not in SCENE_VARIANTS]
        if unknown:
            raise ValidationError(f"unknown scene variant(s): {', '.join(unknown)}")
        if self.classes < 3:
            raise ValidationError("need at least one object class besides wall and floor")

    def data_config(self):
        return ToyRoomsConfig(size=self.size, num_object_classes=self.classes - 2, seed=self.seed,
                              num_train=self.train, num_test=self.test)

    def train_config(self):
        return toynet.TrainConfig(base_lr=self.lr, power=self.power, max_iter=self.iters, crop=self.crop,
                                  mirror_prob=self.mirror, momentum=self.momentum, seed=self.seed)


@dataclass
class SplitData:
    images: list
    labels: list
    scenes: np.ndarray
    names: list = field(default_factory=list)


def load_split(manifest):
    images, labels, names = [], [], []
    for i, rec in enumerate(manifest.records):
        images.append(read_rgb_png(manifest.resolve(rec.image_path)))
        labels.append(manifest.labels(i))
        names.append(Path(rec.label_path).name.replace("_label.png", ""))
    return SplitData(images, labels, np.array([r.scene for r in manifest.records]), names)


def predict_split(net, split):
    """``(predicted LabelMaps, fused score arrays)`` for every image of a split."""
    preds, scores = [], []
    for image in split.images:
        fused, lab = toynet.segment(net, image)
        preds.append(lab)
        scores.append(np.asarray(fused.scores))
    return preds, scores


def gt_as_prediction(split, num_classes):
    """Ground truth used in place of predictions; confidence 1 on the true class."""
    preds, scores = [], []
    for lab in split.labels:
        arr = lab.labels
        onehot = np.zeros(arr.shape + (num_classes,))
        valid = arr != IGNORE
        onehot[valid, arr[valid]] = 1.0
        preds.append(lab)
        scores.append(onehot)
    return preds, scores


def scene_features(preds, num_classes, mode, delta):
    return np.array([features.compute(p, num_classes, mode, delta) for p in preds])


def run_scene_variants(train_preds, train_scenes, test_preds, test_scenes, num_classes, variants,
                       C=1.0, tol=1e-4, delta=features.DEFAULT_DELTA_FRACTION, num_scenes=None):
    """Train one SVM per variant; returns ``{variant: (accuracy, model, test predictions)}``."""
    M = num_scenes or int(max(train_scenes.max(), test_scenes.max()) + 1)
    out = {}
    for name in variants:
        mode, kernel = SCENE_VARIANTS[name]
        Xtr = scene_features(train_preds, num_classes, mode, delta)
        Xte = scene_features(test_preds, num_classes, mode, delta)
        model = svm.train_svm(Xtr, train_scenes, kernel, C, tol, num_classes=M)
        pred = svm.predict_many(model, Xte)
        out[name] = (evaluation.scene_accuracy(test_scenes, pred), model, pred)
    return out


def majority_baseline(train_scenes, test_scenes):
    majority = np.bincount(train_scenes).argmax()
    return float(np.mean(test_scenes == majority))


def constant_label_baseline(train_labels, test_labels, num_classes):
    counts = sum(features.class_histogram(l, num_classes).values for l in train_labels)
    constant = int(np.argmax(counts))
    preds = [LabelMap(np.full(l.shape, constant, dtype=np.uint8)) for l in test_labels]
    return evaluation.seg_metrics(test_labels, preds, num_classes)


def run_detection(test, preds, scores, object_classes, raw_scores=False, min_area=0):
    all_dets, gt = [], []
    for lab, pred, sc in zip(test.labels, preds, scores):
        conf = sc if raw_scores else softmax(sc.astype(np.float64))
        all_dets.append(detect.detect_objects(pred, conf, object_classes, min_area))
        gt.append(detect.ground_truth_boxes(lab, object_classes))
    return all_dets, gt, evaluation.detection_ap(all_dets, gt, object_classes)


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "n/a"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_kv(path, items):
    Path(path).write_text("".join(f"{k}={_fmt(v)}\n" for k, v in items), encoding="utf-8")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run(cfg, out_dir):
    """Execute every stage; returns the ordered list of ``(key, value)`` metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    produced = []
    metrics = [("seed", cfg.seed)]

    with _Stage("data"):
        if cfg.data_dir:
            data_dir = Path(cfg.data_dir)
            if not data_dir.is_dir():
                raise ValidationError(f"dataset directory not found: {data_dir}")
        else:
            data_dir = out / "data"
            generate(cfg.data_config(), SceneRule.default(cfg.data_config()), data_dir)
            produced.append("data/")
        train_m = load_manifest(data_dir / "train.manifest")
        test_m = load_manifest(data_dir / "test.manifest")
        palette = train_m.palette
        C = len(palette)
        train, test = load_split(train_m), load_split(test_m)
        num_scenes = len(train_m.scene_names) or int(max(train.scenes.max(), test.scenes.max()) + 1)
        object_classes = list(range(2, C))

    losses = None
    with _Stage("train-seg"):
        if cfg.labels_from_gt:
            net = None
        else:
            net = toynet.ToyNet.init(C, scales=cfg.scales, seed=cfg.seed)
            net, losses = toynet.train(net, list(zip(train.images, train.labels)), cfg.train_config())
            toynet.save_checkpoint(net, out / "model.pxck")
            np.savetxt(out / "loss.txt", losses, fmt="%.6f")
            produced += ["model.pxck", "loss.txt"]
            window = min(100, len(losses))
            if window:
                metrics += [("loss_initial_mean100", float(np.mean(losses[:window]))),
                            ("loss_final_mean100", float(np.mean(losses[-window:])))]

    with _Stage("segment"):
        if net is None:
            train_pred, _ = gt_as_prediction(train, C)
            test_pred, test_scores = gt_as_prediction(test, C)
        else:
            train_pred, _ = predict_split(net, train)
            test_pred, test_scores = predict_split(net, test)
            pred_dir = out / "pred"
            pred_dir.mkdir(exist_ok=True)
            for name, lab, sc in zip(test.names, test_pred, test_scores):
                write_label_png(lab, pred_dir / f"{name}.png")
                write_scores(ScoreMap(sc), pred_dir / f"{name}.pxsm")
            produced.append("pred/")

    with _Stage("eval-seg"):
        seg = evaluation.seg_metrics(test.labels, test_pred, C)
        base = constant_label_baseline(train.labels, test.labels, C)
        metrics += [("pixel_acc", seg.pixel_accuracy), ("class_acc", seg.mean_class_accuracy),
                    ("mean_iou", seg.mean_iou), ("baseline_mean_iou", base.mean_iou)]
        metrics += [(f"iou.{palette.names[c]}", seg.iou[c]) for c in range(C)]

    with _Stage("scene"):
        scene = run_scene_variants(train_pred, train.scenes, test_pred, test.scenes, C, cfg.scene_variants,
                                   cfg.svm_C, cfg.svm_tol, cfg.delta, num_scenes)
        baseline = majority_baseline(train.scenes, test.scenes)
        metrics.append(("scene_majority_baseline", baseline))
        for name, (acc, model, pred) in scene.items():
            metrics.append((f"scene_acc.{name}", acc))
            svm.save_model(model, out / f"scene_{name}.pxsvm")
            produced.append(f"scene_{name}.pxsvm")
        if "hist_linear" in scene and "pyramid_kernel" in scene:
            holds = scene["pyramid_kernel"][0] >= scene["hist_linear"][0]
            metrics.append(("fidelity.pyramid_kernel_ge_hist_linear", "holds" if holds else "violated"))

    with _Stage("detect"):
        dets, gt_boxes, ap = run_detection(test, test_pred, test_scores, object_classes,
                                           cfg.raw_scores, cfg.min_area)
        det_dir = out / "det"
        det_dir.mkdir(exist_ok=True)
        for name, d in zip(test.names, dets):
            detect.write_detections(d, det_dir / f"{name}.det")
        produced.append("det/")

    with _Stage("eval-det"):
        metrics += [(f"ap.{palette.names[c]}", ap[c][0]) for c in object_classes]
        metrics.append(("map", evaluation.mean_ap([ap[c][0] for c in object_classes])))

    with _Stage("report"):
        write_kv(out / "metrics.txt", metrics)
        produced.insert(0, "metrics.txt")
        if cfg.figures:
            if losses is not None:
                plots.plot_loss(losses, out / "loss.png")
                produced.append("loss.png")
            plots.plot_iou(seg.iou, palette.names, out / "iou.png")
            plots.plot_pr_curves({c: ap[c][1] for c in object_classes}, palette.names, out / "pr_curves.png")
            plots.plot_scene_variants({k: v[0] for k, v in scene.items()}, out / "scene_accuracy.png", baseline)
            produced += ["iou.png", "pr_curves.png", "scene_accuracy.png"]
        (out / "manifest.txt").write_text("".join(f"{p}\n" for p in produced + ["manifest.txt"]),
                                          encoding="utf-8")
    return metrics
