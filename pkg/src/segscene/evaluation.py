"""Segmentation, scene and detection metrics."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .grid import IGNORE

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)
IOU_THRESHOLD = 0.5


class ConfusionMatrix:
    """C x C pixel counts; entry (g, p) = pixels with ground truth g predicted as p."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, gt, pred):
        g = np.asarray(getattr(gt, "labels", gt))
        p = np.asarray(getattr(pred, "labels", pred))
        if g.shape != p.shape:
            raise DimensionError(f"ground truth {g.shape} and prediction {p.shape} differ in size")
        keep = g != IGNORE
        g = g[keep].astype(np.int64)
        p = p[keep].astype(np.int64)
        C = self.num_classes
        if g.size and (g.max() >= C or p.max() >= C):
            raise ValidationError(f"labels must be below C={C} (or {IGNORE} in ground truth)")
        self.counts += np.bincount(g * C + p, minlength=C * C).reshape(C, C)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class SegMetrics:
    pixel_accuracy: float
    mean_class_accuracy: float
    class_accuracy: np.ndarray  # nan where the class has no ground-truth pixels
    iou: np.ndarray             # nan where the class is in neither ground truth nor prediction
    mean_iou: float
    confusion: ConfusionMatrix


def metrics_from_confusion(cm):
    M = cm.counts.astype(np.float64)
    if cm.total == 0:
        raise ValidationError("no annotated pixels")
    tp = np.diag(M)
    gt_sum = M.sum(axis=1)
    pred_sum = M.sum(axis=0)
    union = gt_sum + pred_sum - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        class_acc = np.where(gt_sum > 0, tp / gt_sum, np.nan)
        iou = np.where(union > 0, tp / union, np.nan)
    return SegMetrics(
        pixel_accuracy=float(tp.sum() / M.sum()),
        mean_class_accuracy=float(np.nanmean(class_acc)),
        class_accuracy=class_acc,
        iou=iou,
        mean_iou=float(np.nanmean(iou)),
        confusion=cm,
    )


def seg_metrics(gt, pred, num_classes):
    gt, pred = list(gt), list(pred)
    if len(gt) != len(pred):
        raise DimensionError(f"{len(gt)} ground-truth maps but {len(pred)} predictions")
    cm = ConfusionMatrix(num_classes)
    for g, p in zip(gt, pred):
        cm.add(g, p)
    return metrics_from_confusion(cm)


def scene_accuracy(gt, pred):
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.size == 0:
        raise ValidationError("scene accuracy of an empty list is undefined")
    if gt.shape != pred.shape:
        raise DimensionError(f"{gt.size} ground-truth scenes but {pred.size} predictions")
    return float(np.mean(gt == pred))


def box_iou(a, b):
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class PrCurve:
    scores: np.ndarray
    true_positive: np.ndarray
    num_positives: int
    precision: np.ndarray
    recall: np.ndarray
    interpolated: np.ndarray  # precision envelope at the 11 recall levels
    ap: float


def interpolated_precision(precision, recall, levels=RECALL_LEVELS):
    """Max precision over ranks whose recall reaches each level (0 if it never does)."""
    out = np.zeros(len(levels))
    for k, r in enumerate(levels):
        reached = recall >= r - 1e-12
        out[k] = precision[reached].max() if reached.any() else 0.0
    return out


def average_precision(detections, gt_boxes, iou_threshold=IOU_THRESHOLD):
    """11-point interpolated AP for one class.

    ``detections[i]`` and ``gt_boxes[i]`` hold the detections and ground-truth
    boxes of image ``i``. Returns ``(ap, curve)``; ``ap`` is None when there is
    no ground-truth box at all.
    """
    if len(detections) != len(gt_boxes):
        raise DimensionError("detections and ground truth must cover the same images")
    ranked = [(-d.score, i, j, d) for i, dets in enumerate(detections) for j, d in enumerate(dets)]
    ranked.sort(key=lambda t: t[:3])
    num_pos = sum(len(b) for b in gt_boxes)
    used = [np.zeros(len(b), dtype=bool) for b in gt_boxes]
    tp = np.zeros(len(ranked), dtype=bool)
    for k, (_, i, _, det) in enumerate(ranked):
        best, best_iou = -1, iou_threshold
        for g, box in enumerate(gt_boxes[i]):
            if used[i][g]:
                continue
            iou = box_iou(det.box, box)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = g, iou
        if best >= 0:
            used[i][best] = True
            tp[k] = True
    ctp = np.cumsum(tp)
    ranks = np.arange(1, len(ranked) + 1)
    precision = ctp / ranks if len(ranked) else np.zeros(0)
    recall = ctp / num_pos if num_pos else np.zeros(len(ranked))
    envelope = interpolated_precision(precision, recall)
    ap = float(envelope.mean()) if num_pos else None
    scores = np.array([-t[0] for t in ranked])
    return ap, PrCurve(scores, tp, num_pos, precision, recall, envelope, ap if ap is not None else float("nan"))


def mean_ap(aps):
    """Mean over classes whose AP is defined (not None / not nan)."""
    defined = [a for a in aps if a is not None and not np.isnan(a)]
    if not defined:
        raise ValidationError("no class has a defined average precision")
    return float(np.mean(defined))


def detection_ap(detections, gt_boxes, object_classes):
    """Per-class AP from per-image detection lists and per-image ``{class: boxes}`` dicts."""
    results = {}
    for c in object_classes:
        dets = [[d for d in image_dets if d.class_id == c] for image_dets in detections]
        boxes = [g.get(c, []) for g in gt_boxes]
        results[c] = average_precision(dets, boxes)
    return results
