"""Matplotlib figures written next to the text reports.

All functions draw onto a fresh figure, save it to ``path`` and close it, so
they are safe to call from headless runs.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import CLASS_NAMES  # noqa: E402
from .metrics import ConfusionMatrix, per_class_precision, per_class_recall  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    # keep saved PNG bytes stable between runs
    "svg.hashsalt": "gantransfer",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.1f}%"


def plot_confusion(cm: ConfusionMatrix, path, title: str = "") -> Path:
    """Heat-mapped confusion matrix with precision / recall margins."""
    arr = cm.array
    total = max(cm.total, 1)
    prec, rec = per_class_precision(cm), per_class_recall(cm)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.8, 3.4))
        ax.imshow(arr / total, cmap="Blues", vmin=0, vmax=1)
        for i in range(2):
            for j in range(2):
                share = arr[i, j] / total
                ax.text(j, i, f"{arr[i, j]}\n{100 * share:.1f}%", ha="center", va="center",
                        color="white" if share > 0.5 else "black")
            ax.text(2.0, i, _pct(prec[i]), ha="center", va="center")
        for j in range(2):
            ax.text(j, 2.0, _pct(rec[j]), ha="center", va="center")
        acc = np.trace(arr) / total
        ax.text(2.0, 2.0, f"{100 * acc:.1f}%", ha="center", va="center", fontweight="bold")
        ax.set_xlim(-0.5, 2.5)
        ax.set_ylim(2.5, -0.5)
        ax.set_xticks([0, 1, 2], list(CLASS_NAMES) + [""])
        ax.set_yticks([0, 1, 2], list(CLASS_NAMES) + [""])
        ax.set_xlabel("Target class")
        ax.set_ylabel("Output class")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_gan_history(report, path, title: str = "", smooth: int = 25) -> Path:
    """Losses and mean discriminator outputs per iteration."""
    def ma(x):
        x = np.asarray(x, dtype=float)
        if len(x) < smooth or smooth <= 1:
            return x
        return np.convolve(x, np.ones(smooth) / smooth, mode="valid")

    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.5, 2.8))
        ax1.plot(ma(report.d_loss), label="discriminator")
        ax1.plot(ma(report.g_loss), label="generator")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("loss")
        ax1.legend(frameon=False)
        ax2.plot(ma(report.d_real), label="mean D(real)")
        ax2.plot(ma(report.d_fake), label="mean D(fake)")
        ax2.axhline(0.5, color="0.6", lw=0.8, ls="--")
        ax2.set_ylim(0, 1)
        ax2.set_xlabel("iteration")
        ax2.legend(frameon=False)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_image_grid(pixels: np.ndarray, path, ncols: int = 8, title: str = "") -> Path:
    """Grid of (N, H, W) grayscale images in [0, 1]."""
    n = len(pixels)
    nrows = max(1, -(-n // ncols))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(ncols * 0.9, nrows * 0.9), squeeze=False)
        for k, ax in enumerate(axes.flat):
            ax.axis("off")
            if k < n:
                ax.imshow(pixels[k], cmap="gray", vmin=0, vmax=1)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_classifier_history(report, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        epochs = np.arange(1, len(report.loss) + 1)
        ax.plot(epochs, report.loss, marker="o", ms=3, label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, report.train_accuracy, color="C1", marker="s", ms=3, label="train accuracy")
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("accuracy")
        if title:
            ax.set_title(title)
        return _save(fig, path)
