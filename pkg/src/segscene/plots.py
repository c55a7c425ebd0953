"""Report figures written next to the key=value metric files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-stable
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_loss(losses, path, window=50):
    losses = np.asarray(losses, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(losses, lw=0.5, color="0.7", label="per iteration")
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(losses)), smooth, color="C0", label=f"{window}-iter mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cross-entropy")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_pr_curves(curves, names, path):
    """``curves``: {class id: PrCurve}."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for c, curve in sorted(curves.items()):
        if curve.num_positives == 0:
            continue
        ax.step(np.r_[0.0, curve.recall], np.r_[1.0, curve.precision], where="post",
                label=f"{names[c]} (AP {curve.ap:.2f})")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_iou(iou, names, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    values = np.nan_to_num(np.asarray(iou, dtype=float))
    ax.bar(range(len(values)), values, color="C2")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    _save(fig, path)


def plot_scene_variants(accuracies, path, baseline=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    keys = list(accuracies)
    ax.barh(range(len(keys)), [accuracies[k] for k in keys], color="C1")
    ax.set_yticks(range(len(keys)))
    ax.set_yticklabels(keys)
    if baseline is not None:
        ax.axvline(baseline, color="k", ls="--", lw=1, label="majority class")
        ax.legend(frameon=False)
    ax.set_xlim(0, 1)
    ax.set_xlabel("scene accuracy")
    _save(fig, path)
