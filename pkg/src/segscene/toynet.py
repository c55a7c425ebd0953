"""A small multi-scale fully convolutional pixel labeler written in numpy.

Layer stack, shared by every scale branch::

    conv 3x3 (3 -> 16) - ReLU - atrous conv 3x3, rate 2 (16 -> 16) - ReLU - conv 1x1 (16 -> C)

All convolutions are stride 1 and padding-preserving. A branch rescales the
image, runs the stack and resizes the scores back to full resolution
(bilinear, align-corners-false); the branches are then fused by an
element-wise maximum, and training minimises the mean pixel cross-entropy of
the softmax of the fused map.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import substream
from .errors import DimensionError, DivergenceError, FormatError, ValidationError
from .grid import IGNORE, LabelMap, ScoreMap, interp_matrix
from .labeling import softmax

log = logging.getLogger(__name__)

DEFAULT_SCALES = (0.5, 0.75, 1.0)
HIDDEN = 16
MIN_SIZE = 8
# rough per-channel statistics of 8-bit images mapped to [0, 1]
INPUT_MEAN = 0.5
INPUT_STD = 0.25
# (name, kernel size, dilation)
LAYERS = (("conv1", 3, 1), ("conv2", 3, 2), ("conv3", 1, 1))

CKPT_MAGIC = b"PXCK"
CKPT_VERSION = 1


@lru_cache(maxsize=256)
def _resize_matrix(n_in, n_out, dtype):
    return interp_matrix(n_in, n_out, "bilinear").astype(dtype)


def _resize(x, h, w):
    """Bilinear resize of an (H, W, C) array; also returns the two 1-D operators."""
    Ry = _resize_matrix(x.shape[0], h, x.dtype.str)
    Rx = _resize_matrix(x.shape[1], w, x.dtype.str)
    out = np.einsum("ij,jkc->ikc", Ry, x, optimize=True)
    out = np.einsum("lk,ikc->ilc", Rx, out, optimize=True)
    return out, Ry, Rx


def _resize_backward(grad, Ry, Rx):
    g = np.einsum("ij,ikc->jkc", Ry, grad, optimize=True)
    return np.einsum("lk,ilc->ikc", Rx, g, optimize=True)


def scaled_size(n, scale):
    return max(1, int(np.floor(n * scale + 0.5)))


def _im2col(x, k, dilation):
    h, w, cin = x.shape
    pad = dilation * (k // 2)
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    taps = [xp[dy * dilation:dy * dilation + h, dx * dilation:dx * dilation + w]
            for dy in range(k) for dx in range(k)]
    return np.concatenate(taps, axis=2).reshape(h * w, k * k * cin)


def _col2im(dcols, shape, k, dilation):
    h, w, cin = shape
    pad = dilation * (k // 2)
    dxp = np.zeros((h + 2 * pad, w + 2 * pad, cin), dtype=dcols.dtype)
    dcols = dcols.reshape(h, w, k * k, cin)
    t = 0
    for dy in range(k):
        for dx in range(k):
            dxp[dy * dilation:dy * dilation + h, dx * dilation:dx * dilation + w] += dcols[:, :, t]
            t += 1
    return dxp[pad:pad + h, pad:pad + w] if pad else dxp


def conv2d(x, weight, bias, dilation=1):
    """Stride-1 'same' convolution (cross-correlation) of an (H, W, Cin) array.

    ``weight`` has shape (k, k, Cin, Cout).
    """
    k, _, _, cout = weight.shape
    cols = _im2col(x, k, dilation)
    out = cols @ weight.reshape(-1, cout) + bias
    return out.reshape(x.shape[0], x.shape[1], cout)


@dataclass
class ToyNet:
    params: dict
    scales: tuple = DEFAULT_SCALES

    @classmethod
    def init(cls, num_classes, in_channels=3, scales=DEFAULT_SCALES, seed=0, dtype=np.float32):
        rng = substream(seed, "toynet-init")
        shapes = {"conv1": (3, 3, in_channels, HIDDEN), "conv2": (3, 3, HIDDEN, HIDDEN),
                  "conv3": (1, 1, HIDDEN, num_classes)}
        params = {}
        for name, shape in shapes.items():
            fan_in = shape[0] * shape[1] * shape[2]
            gain = 2.0 if name != "conv3" else 1.0
            params[name + ".w"] = (rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)).astype(dtype)
            params[name + ".b"] = np.zeros(shape[3], dtype=dtype)
        return cls(params, tuple(float(s) for s in scales))

    @property
    def num_classes(self):
        return self.params["conv3.w"].shape[3]

    @property
    def in_channels(self):
        return self.params["conv1.w"].shape[2]

    @property
    def dtype(self):
        return self.params["conv1.w"].dtype

    def astype(self, dtype):
        return ToyNet({k: v.astype(dtype) for k, v in self.params.items()}, self.scales)

    def copy(self):
        return self.astype(self.dtype)

    def parameter_names(self):
        return [f"{name}.{p}" for name, _, _ in LAYERS for p in ("w", "b")]


def preprocess(image, dtype=np.float32):
    """uint8 RGB -> standardised floats; float input is taken as already preprocessed."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return ((image.astype(dtype) / 255.0 - INPUT_MEAN) / INPUT_STD).astype(dtype)
    return image.astype(dtype, copy=False)


def _stack_forward(net, x):
    cache = []
    for i, (name, k, dil) in enumerate(LAYERS):
        cols = _im2col(x, k, dil)
        w = net.params[name + ".w"]
        out = (cols @ w.reshape(-1, w.shape[3]) + net.params[name + ".b"]).reshape(x.shape[0], x.shape[1], -1)
        cache.append((cols, x))
        if i < len(LAYERS) - 1:
            out = np.maximum(out, 0)
        x = out
    return x, cache


def _stack_backward(net, dout, cache, grads):
    for i in reversed(range(len(LAYERS))):
        name, k, dil = LAYERS[i]
        cols, layer_in = cache[i]
        w = net.params[name + ".w"]
        d2 = dout.reshape(-1, w.shape[3])
        grads[name + ".w"] += (cols.T @ d2).reshape(w.shape)
        grads[name + ".b"] += d2.sum(axis=0)
        if i == 0:
            break
        dx = _col2im(d2 @ w.reshape(-1, w.shape[3]).T, layer_in.shape, k, dil)
        # layer i consumes the ReLU output of layer i-1
        dout = dx * (layer_in > 0)


def _check_image(net, x):
    if x.ndim != 3 or x.shape[2] != net.in_channels:
        raise DimensionError(f"expected an H x W x {net.in_channels} image, got shape {x.shape}")
    if x.shape[0] < MIN_SIZE or x.shape[1] < MIN_SIZE:
        raise DimensionError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {x.shape[0]}x{x.shape[1]}")


def _branches(net, x, keep_cache):
    h, w = x.shape[:2]
    outs, caches = [], []
    for s in net.scales:
        hs, ws = scaled_size(h, s), scaled_size(w, s)
        xs = x if (hs, ws) == (h, w) else _resize(x, hs, ws)[0]
        out, cache = _stack_forward(net, xs)
        up, Ry, Rx = _resize(out, h, w)
        outs.append(up)
        if keep_cache:
            caches.append((cache, Ry, Rx))
    return outs, caches


def forward(net, image):
    """One full-resolution ScoreMap per scale branch."""
    x = preprocess(image, net.dtype)
    _check_image(net, x)
    outs, _ = _branches(net, x, keep_cache=False)
    return [ScoreMap(o) for o in outs]


def fused_scores(net, image):
    x = preprocess(image, net.dtype)
    _check_image(net, x)
    outs, _ = _branches(net, x, keep_cache=False)
    return np.maximum.reduce(outs)


def loss_and_gradients(net, image, gt):
    """Mean cross-entropy over non-ignored pixels and its gradient for every parameter."""
    x = preprocess(image, net.dtype)
    _check_image(net, x)
    labels = gt.labels if isinstance(gt, LabelMap) else np.asarray(gt)
    if labels.shape != x.shape[:2]:
        raise DimensionError(f"ground truth {labels.shape} does not match image {x.shape[:2]}")
    valid = labels != IGNORE
    K = int(valid.sum())
    if K == 0:
        raise ValidationError("no supervised positions")
    if labels[valid].max() >= net.num_classes:
        raise ValidationError("ground-truth label exceeds the network's class count")

    outs, caches = _branches(net, x, keep_cache=True)
    stacked = np.stack(outs)
    winner = np.argmax(stacked, axis=0)  # first scale wins ties
    fused = np.take_along_axis(stacked, winner[None], axis=0)[0]

    prob = softmax(fused.astype(np.float64))
    ys, xs = np.nonzero(valid)
    target = labels[ys, xs].astype(np.intp)
    p_true = prob[ys, xs, target]
    loss = float(-np.mean(np.log(np.maximum(p_true, np.finfo(np.float64).tiny))))

    dfused = prob
    dfused[ys, xs, target] -= 1.0
    dfused[~valid] = 0.0
    dfused = (dfused / K).astype(net.dtype)

    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    for s, (cache, Ry, Rx) in enumerate(caches):
        dup = np.where(winner == s, dfused, 0)
        if not dup.any():
            continue
        dout = _resize_backward(dup, Ry, Rx)
        _stack_backward(net, dout, cache, grads)
    return loss, grads


def central_difference(net, image, gt, name, index, eps=1e-4):
    """Numerical derivative of the loss w.r.t. one parameter entry."""
    probe = net.copy()
    p = probe.params[name]
    orig = p[index]
    p[index] = orig + eps
    plus, _ = loss_and_gradients(probe, image, gt)
    p[index] = orig - eps
    minus, _ = loss_and_gradients(probe, image, gt)
    return (plus - minus) / (2.0 * eps)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.001
    power: float = 0.9
    max_iter: int = 2000
    batch_size: int = 1
    crop: int = 48
    mirror_prob: float = 0.5
    momentum: float = 0.9
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValidationError("base learning rate must be positive")
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ValidationError("mirror probability must lie in [0, 1]")
        if self.crop <= 0:
            raise ValidationError("crop size must be positive")
        if self.max_iter < 0:
            raise ValidationError("max_iter must be non-negative")
        if self.batch_size != 1:
            raise ValidationError("only batch size 1 is supported")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")


def poly_lr(iteration, cfg):
    """``base_lr * (1 - iter / max_iter) ** power``."""
    if not 0 <= iteration <= cfg.max_iter:
        raise ValidationError(f"iteration {iteration} outside [0, {cfg.max_iter}]")
    if cfg.max_iter == 0:
        return cfg.base_lr
    return cfg.base_lr * (1.0 - iteration / cfg.max_iter) ** cfg.power


def augment(image, labels, cfg, rng):
    """Random horizontal mirror followed by a random square crop.

    Returns ``(image, labels, mirrored)``.
    """
    h, w = labels.shape
    if cfg.crop > min(h, w):
        raise ValidationError(f"crop size {cfg.crop} exceeds image size {h}x{w}")
    mirrored = bool(rng.random() < cfg.mirror_prob)
    if mirrored:
        image = image[:, ::-1]
        labels = labels[:, ::-1]
    y0 = int(rng.integers(0, h - cfg.crop + 1))
    x0 = int(rng.integers(0, w - cfg.crop + 1))
    return image[y0:y0 + cfg.crop, x0:x0 + cfg.crop], labels[y0:y0 + cfg.crop, x0:x0 + cfg.crop], mirrored


def train(net, samples, cfg, progress=None):
    """SGD with the poly schedule on ``samples``, a sequence of (uint8 image, LabelMap).

    Returns ``(trained_net, losses)`` with one loss per iteration. The input net
    is not modified.
    """
    if len(samples) == 0:
        raise ValidationError("training set is empty")
    net = net.copy()
    rng = substream(cfg.seed, "train-seg")
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    losses = np.zeros(cfg.max_iter)
    for it in range(cfg.max_iter):
        image, labels = samples[int(rng.integers(len(samples)))]
        lab = labels.labels if isinstance(labels, LabelMap) else labels
        img, lab, _ = augment(image, lab, cfg, rng)
        if not (lab != IGNORE).any():
            losses[it] = losses[it - 1] if it else np.nan
            continue
        loss, grads = loss_and_gradients(net, img, lab)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise DivergenceError(it, loss)
        lr = poly_lr(it, cfg)
        for k, g in grads.items():
            v = velocity[k]
            v *= cfg.momentum
            v -= lr * g
            net.params[k] += v
        losses[it] = loss
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d  lr %.3g  loss %.4f", it + 1, lr, float(np.mean(losses[it + 1 - cfg.log_every:it + 1])))
            if progress is not None:
                progress(it + 1, losses[: it + 1])
    return net, losses


def segment(net, image):
    """``(fused ScoreMap, LabelMap)`` for one uint8 image."""
    fused = fused_scores(net, image)
    return ScoreMap(fused), LabelMap(np.argmax(fused, axis=-1).astype(np.uint8))


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(net, path):
    parts = [CKPT_MAGIC, bytes([CKPT_VERSION]), struct.pack("<I", len(net.scales)),
             struct.pack(f"<{len(net.scales)}d", *net.scales), struct.pack("<I", len(LAYERS))]
    for name, _, dil in LAYERS:
        parts.append(struct.pack("<5I", dil, *net.params[name + ".w"].shape))
    for name, _, _ in LAYERS:
        parts.append(np.ascontiguousarray(net.params[name + ".w"], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(net.params[name + ".b"], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, num_classes=None):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    try:
        if data[:4] != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        if data[4] != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {data[4]}")
        pos = 5
        (n_scales,) = struct.unpack_from("<I", data, pos)
        pos += 4
        scales = struct.unpack_from(f"<{n_scales}d", data, pos)
        pos += 8 * n_scales
        (n_layers,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if n_layers != len(LAYERS):
            raise FormatError(f"{path}: expected {len(LAYERS)} layers, found {n_layers}")
        shapes = []
        for name, k, dil in LAYERS:
            d, *shape = struct.unpack_from("<5I", data, pos)
            pos += 20
            if d != dil or shape[0] != k or shape[1] != k:
                raise FormatError(f"{path}: layer {name} has kernel {shape[:2]} rate {d}, expected {k}x{k} rate {dil}")
            shapes.append(tuple(shape))
        for a, b in zip(shapes, shapes[1:]):
            if a[3] != b[2]:
                raise FormatError(f"{path}: layer shapes do not chain ({a} -> {b})")
        params = {}
        for (name, _, _), shape in zip(LAYERS, shapes):
            n = int(np.prod(shape))
            if len(data) < pos + 4 * (n + shape[3]):
                raise FormatError(f"{path}: truncated checkpoint")
            params[name + ".w"] = np.frombuffer(data, "<f4", n, pos).reshape(shape).astype(np.float32)
            pos += 4 * n
            params[name + ".b"] = np.frombuffer(data, "<f4", shape[3], pos).astype(np.float32)
            pos += 4 * shape[3]
        if pos != len(data):
            raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    except struct.error:
        raise FormatError(f"{path}: truncated checkpoint") from None
    net = ToyNet(params, tuple(scales))
    if num_classes is not None and net.num_classes != num_classes:
        raise FormatError(f"{path}: checkpoint predicts {net.num_classes} classes, expected {num_classes}")
    return net
