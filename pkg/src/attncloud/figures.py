"""Matplotlib figures rendered next to the delimited reports.

Everything goes through the Agg backend with pinned styling, so identical
inputs render byte-identical PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

LABEL_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def loss_curve_figure(history, path, title="training loss"):
    """Train/val loss against epoch, log scale."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 3.4))
        epochs = np.arange(len(history))
        train = [h[0] for h in history]
        val = [h[1] for h in history]
        ax.plot(epochs, train, label="train", lw=1.4)
        if np.any(np.isfinite(val)):
            ax.plot(epochs, val, label="val", lw=1.4)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def metric_bars_figure(rows, path):
    """One bar panel per metric over its categories."""
    metrics = sorted({m for m, _, _ in rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(
            1, len(metrics), figsize=(2.3 * len(metrics) + 1.2, 3.2), squeeze=False
        )
        for ax, metric in zip(axes[0], metrics):
            cats = [(c, v) for m, c, v in rows if m == metric]
            names = [c for c, _ in cats]
            values = [v for _, v in cats]
            ax.bar(range(len(cats)), values, color="#4878a8")
            ax.set_xticks(range(len(cats)))
            ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
            ax.set_title(metric)
        fig.tight_layout()
        _save(fig, path)


def _scatter_views(axes_row, points, labels=None, point_size=2.0):
    planes = (("x", "y", 0, 1), ("x", "z", 0, 2), ("y", "z", 1, 2))
    colors = "#4878a8"
    if labels is not None:
        colors = [LABEL_COLORS[int(v) % len(LABEL_COLORS)] for v in labels]
    for ax, (nx, ny, i, j) in zip(axes_row, planes):
        ax.scatter(points[:, i], points[:, j], s=point_size, c=colors, linewidths=0)
        ax.set_xlabel(nx)
        ax.set_ylabel(ny)
        ax.set_aspect("equal")


def cloud_views_figure(named_clouds, path, point_size=2.0):
    """Orthographic xy/xz/yz scatter projections, one row per named cloud.

    named_clouds: list of (name, points [n, 3], labels or None).
    """
    rows = len(named_clouds)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, 3, figsize=(8.0, 2.7 * rows), squeeze=False)
        for r, (name, points, labels) in enumerate(named_clouds):
            _scatter_views(axes[r], np.asarray(points), labels, point_size)
            axes[r][0].set_title(name, loc="left", fontsize=9)
        fig.tight_layout()
        _save(fig, path)
