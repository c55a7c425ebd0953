"""Command-line entry point: ``segscene <subcommand> ...``.

Exit codes: 0 success, 1 validation error (bad input, bad file), 2 internal error.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, detect, evaluation, features, pipeline, render, svm, toynet
from .errors import ValidationError
from .grid import (ClassPalette, read_label_png, read_rgb_png, read_scores, write_label_png,
                   write_rgb_png, write_scores)
from .labeling import argmax_label, max_fuse, softmax

log = logging.getLogger("segscene")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _key(path):
    """Image key shared by a label map, its prediction, features and detections."""
    stem = Path(path).stem
    for suffix in ("_label", "_rgb"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _emit(rows, kv):
    width = max((len(k) for k, _ in rows), default=0)
    for k, v in rows:
        print(f"{k:<{width}}  {pipeline._fmt(v)}")
    print()
    for k, v in kv:
        print(f"{k}={pipeline._fmt(v)}")


# --- subcommands ------------------------------------------------------------

def cmd_gen_data(args):
    cfg = data.ToyRoomsConfig(size=args.size, num_object_classes=args.classes - 2, seed=args.seed,
                              num_train=args.train, num_test=args.test)
    train, test = data.generate(cfg, data.SceneRule.default(cfg), args.out)
    print(f"wrote {len(train)} train and {len(test)} test images to {args.out}")


def cmd_train_seg(args):
    manifest = data.load_manifest(args.data)
    split = pipeline.load_split(manifest)
    cfg = toynet.TrainConfig(base_lr=args.lr, power=args.power, max_iter=args.iters, crop=args.crop,
                             mirror_prob=args.mirror, momentum=args.momentum, seed=args.seed)
    net = toynet.ToyNet.init(len(manifest.palette), seed=args.seed)
    net, losses = toynet.train(net, list(zip(split.images, split.labels)), cfg)
    toynet.save_checkpoint(net, args.out)
    if args.loss_out:
        np.savetxt(args.loss_out, losses, fmt="%.6f")
    window = min(100, len(losses))
    if window:
        print(f"loss_initial_mean100={np.mean(losses[:window]):.6f}")
        print(f"loss_final_mean100={np.mean(losses[-window:]):.6f}")


def cmd_segment(args):
    net = toynet.load_checkpoint(args.model)
    fused, labels = toynet.segment(net, read_rgb_png(args.image))
    if args.out_scores:
        write_scores(fused, args.out_scores)
    if args.out_labels:
        write_label_png(labels, args.out_labels)


def cmd_fuse(args):
    write_scores(max_fuse([read_scores(p) for p in args.inputs]), args.out)


def cmd_label(args):
    write_label_png(argmax_label(read_scores(args.input)), args.out)


def cmd_features(args):
    labels = read_label_png(args.labels, args.classes)
    features.write_feat(features.compute(labels, args.classes, args.mode, args.delta), args.out)


def _feature_for(directory, rec):
    for name in (_key(rec.label_path), Path(rec.label_path).stem, _key(rec.image_path)):
        path = Path(directory) / f"{name}.feat"
        if path.exists():
            return features.read_feat(path)
    raise ValidationError(f"no feature file for {rec.label_path} in {directory}")


def cmd_train_scene(args):
    manifest = data.load_manifest(args.labels, validate=False)
    X = np.array([_feature_for(args.features, r) for r in manifest.records])
    y = np.array([r.scene for r in manifest.records])
    C = args.C
    if args.select_C:
        C = svm.select_C(X, y, args.kernel)
        print(f"selected C={C}")
    model = svm.train_svm(X, y, args.kernel, C, args.tol, num_classes=len(manifest.scene_names) or None)
    svm.save_model(model, args.out)


def cmd_classify_scene(args):
    model = svm.load_model(args.model)
    scene, values = svm.predict(model, features.read_feat(args.features))
    print(scene)
    print(" ".join(f"{v:.6f}" for v in values))


def cmd_detect(args):
    labels = read_label_png(args.labels)
    scores = np.asarray(read_scores(args.scores).scores, dtype=np.float64)
    conf = scores if args.raw_scores else softmax(scores)
    dets = detect.detect_objects(labels, conf, args.classes, args.min_area)
    detect.write_detections(dets, args.out)
    print(f"{len(dets)} detections")


def _label_pngs(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"directory not found: {directory}")
    return {_key(p): p for p in sorted(directory.glob("*.png")) if not p.stem.endswith("_rgb")}


def cmd_eval_seg(args):
    gt_files = _label_pngs(args.gt)
    pred_files = _label_pngs(args.pred)
    keys = sorted(set(gt_files) & set(pred_files))
    if not keys:
        raise ValidationError("no matching ground-truth / prediction PNG pairs")
    missing = sorted(set(gt_files) - set(pred_files))
    if missing:
        raise ValidationError(f"{len(missing)} ground-truth maps have no prediction (first: {missing[0]})")
    gt = [read_label_png(gt_files[k], args.classes) for k in keys]
    pred = [read_label_png(pred_files[k], args.classes) for k in keys]
    m = evaluation.seg_metrics(gt, pred, args.classes)
    rows = [("pixel accuracy", m.pixel_accuracy), ("mean class accuracy", m.mean_class_accuracy)]
    rows += [(f"IoU class {c}", m.iou[c]) for c in range(args.classes)]
    rows.append(("mean IoU", m.mean_iou))
    kv = [("pixel_acc", m.pixel_accuracy), ("class_acc", m.mean_class_accuracy)]
    kv += [(f"iou.{c}", m.iou[c]) for c in range(args.classes)] + [("mean_iou", m.mean_iou)]
    _emit(rows, kv)


def cmd_eval_scene(args):
    manifest = data.load_manifest(args.gt, validate=False)
    gt = [r.scene for r in manifest.records]
    pred_path = Path(args.pred)
    if not pred_path.exists():
        raise ValidationError(f"prediction file not found: {pred_path}")
    try:
        pred = [int(v) for v in pred_path.read_text(encoding="utf-8").split()]
    except ValueError:
        raise ValidationError(f"{pred_path}: expected one integer scene id per line") from None
    acc = evaluation.scene_accuracy(gt, pred)
    _emit([("scene accuracy", acc)], [("scene_acc", acc)])


def cmd_eval_det(args):
    manifest = data.load_manifest(args.gt)
    C = len(manifest.palette)
    classes = args.classes or list(range(2, C))
    dets, gt = [], []
    for i, rec in enumerate(manifest.records):
        path = Path(args.pred) / f"{_key(rec.label_path)}.det"
        dets.append(detect.read_detections(path) if path.exists() else [])
        gt.append(detect.ground_truth_boxes(manifest.labels(i), classes))
    ap = evaluation.detection_ap(dets, gt, classes)
    names = manifest.palette.names
    rows = [(f"AP {names[c]}", ap[c][0]) for c in classes]
    mean = evaluation.mean_ap([ap[c][0] for c in classes])
    rows.append(("mean AP", mean))
    kv = [(f"ap.{names[c]}", ap[c][0]) for c in classes] + [("map", mean)]
    _emit(rows, kv)


def cmd_render(args):
    labels = read_label_png(args.labels)
    palette = ClassPalette.load(args.palette) if args.palette else \
        ClassPalette(tuple(f"class{c}" for c in range(args.classes)))
    base = read_rgb_png(args.image) if args.image else None
    out = render.render_labels(labels, palette, base)
    if args.det:
        gt = []
        if args.gt_labels:
            gt_map = read_label_png(args.gt_labels)
            classes = sorted({d.class_id for d in detect.read_detections(args.det)})
            gt = [b for boxes in detect.ground_truth_boxes(gt_map, classes).values() for b in boxes]
        out = render.render_detections(out, detect.read_detections(args.det), gt)
    write_rgb_png(out, args.out)


def cmd_pipeline(args):
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.labels_from_gt:
        cfg.labels_from_gt = True
    if args.scene_variant:
        cfg.scene_variants = tuple(args.scene_variant)
    if args.raw_scores:
        cfg.raw_scores = True
    if args.min_area is not None:
        cfg.min_area = args.min_area
    if args.data_dir:
        cfg.data_dir = args.data_dir
    cfg.validate()
    metrics = pipeline.run(cfg, args.out)
    for k, v in metrics:
        print(f"{k}={pipeline._fmt(v)}")


def build_parser():
    parser = argparse.ArgumentParser(prog="segscene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a ToyRooms dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=8, help="total classes incl. wall and floor")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-seg", help="train the toy pixel labeler")
    p.add_argument("--data", required=True, help="train.manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--power", type=float, default=0.9)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--crop", type=int, default=48)
    p.add_argument("--mirror", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-out")
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("segment", help="fused scores and labels for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-scores")
    p.add_argument("--out-labels")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("fuse", help="element-wise max of score maps")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("label", help="argmax labels of a score map")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("features", help="scene descriptor of a label map")
    p.add_argument("--labels", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--mode", choices=("hist", "onehot", "pyramid"), default="hist")
    p.add_argument("--delta", type=float, default=features.DEFAULT_DELTA_FRACTION)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train-scene", help="train the scene SVM")
    p.add_argument("--features", required=True, help="directory of .feat files")
    p.add_argument("--labels", required=True, help="manifest with scene ids")
    p.add_argument("--kernel", choices=svm.KERNELS, default="linear")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--select-C", action="store_true", help="5-fold selection over 0.01..100")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_scene)

    p = sub.add_parser("classify-scene", help="predict a scene id")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_classify_scene)

    p = sub.add_parser("detect", help="boxes from a segmentation")
    p.add_argument("--labels", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--classes", type=_int_list, required=True)
    p.add_argument("--raw-scores", action="store_true", help="score boxes with raw fused scores")
    p.add_argument("--min-area", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval-seg", help="segmentation metrics")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("eval-scene", help="scene accuracy")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, help="one scene id per line, manifest order")
    p.set_defaults(func=cmd_eval_scene)

    p = sub.add_parser("eval-det", help="per-class 11-point AP and mean AP")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, help="directory of .det files")
    p.add_argument("--classes", type=_int_list)
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("render", help="label / detection overlay PNG")
    p.add_argument("--labels", required=True)
    p.add_argument("--image")
    p.add_argument("--det")
    p.add_argument("--gt-labels", help="ground-truth label map for green boxes")
    p.add_argument("--palette")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--labels-from-gt", action="store_true")
    p.add_argument("--scene-variant", action="append", choices=tuple(pipeline.SCENE_VARIANTS))
    p.add_argument("--raw-scores", action="store_true")
    p.add_argument("--min-area", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except pipeline.StageError as exc:
        print(f"error: pipeline aborted at stage {exc.stage!r}: {exc.cause}", file=sys.stderr)
        return 1 if isinstance(exc.cause, ValidationError) else 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
