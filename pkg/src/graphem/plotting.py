"""Figure rendering for the experiment commands.

Every command writes its delimited output first; these helpers turn the
same data into PNG files next to it. Rendering is best-effort styling,
no interactivity, Agg backend only.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def line_plot(x, series: dict, xlabel: str, ylabel: str, title: str,
              path: Path) -> None:
    """One line per series over a shared x axis, with optional error bars."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, values in series.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:  # (mean, std) rows
            ax.errorbar(x, values[0], yerr=values[1], marker="o",
                        capsize=3, label=name)
        else:
            ax.plot(x, values, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)


def grouped_bars(groups: list[str], series: dict, ylabel: str, title: str,
                 path: Path) -> None:
    """Grouped bar chart; series maps a label to one value per group."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.8 / max(len(series), 1)
    base = np.arange(len(groups), dtype=float)
    for k, (name, values) in enumerate(series.items()):
        ax.bar(base + k * width, values, width, label=name)
    ax.set_xticks(base + width * (len(series) - 1) / 2)
    ax.set_xticklabels(groups)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    _finish(fig, path)


def heatmap(matrix: np.ndarray, title: str, path: Path) -> None:
    """Class-by-class matrix with annotated cells."""
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(matrix, cmap="viridis")
    for (i, j), v in np.ndenumerate(matrix):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center",
                color="white", fontsize=8)
    ax.set_xlabel("class")
    ax.set_ylabel("class")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    _finish(fig, path)


def training_curves(histories: dict, path: Path) -> None:
    """Loss and test accuracy per epoch for each labelled history.

    ``histories`` maps a label to a list of EpochMetric-like objects.
    """
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name, history in histories.items():
        epochs = [m.epoch for m in history]
        ax_loss.plot(epochs, [m.train_loss for m in history], label=name)
        accs = [(m.epoch, m.test_accuracy) for m in history
                if m.test_accuracy is not None]
        if accs:
            ax_acc.plot([e for e, _ in accs], [a for _, a in accs],
                        label=name)
        else:
            ax_acc.plot(epochs, [m.val_accuracy for m in history],
                        label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    for ax in (ax_loss, ax_acc):
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    _finish(fig, path)
