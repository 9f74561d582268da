"""Matplotlib figures written next to the CSV and PNM outputs."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = ["#0072b2", "#e69f00", "#009e72", "#d55c00", "#cc79a7", "#56b4e9"]

STYLE = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.edgecolor": "#222222",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def new_figure(ncols: int = 1, nrows: int = 1, width: float = 3.4, height: float = 2.4):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(width * ncols, height * nrows), squeeze=False)
    return fig, axes


def save_figure(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(history: list[dict], path: str, metric_label: str = "test metric") -> str:
    """Train loss and test metric per epoch, side by side."""
    epochs = [row["epoch"] for row in history]
    with plt.rc_context(STYLE):
        fig, axes = new_figure(ncols=2)
        ax_loss, ax_metric = axes[0]
        ax_loss.plot(epochs, [row["train_loss"] for row in history], marker="o", ms=3)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_metric.plot(epochs, [row["test_metric"] for row in history], marker="o", ms=3, color=COLORS[1])
        ax_metric.set_xlabel("epoch")
        ax_metric.set_ylabel(metric_label)
        fig.tight_layout()
    return save_figure(fig, path)


def image_grid(grid: np.ndarray, path: str, title: str | None = None) -> str:
    """Show a composed canvas grid (values in [0, 1]) without axes."""
    h, w = grid.shape[:2]
    scale = 4.0 / max(h, w)
    with plt.rc_context(STYLE):
        fig, axes = new_figure(width=max(w * scale, 1.0) * 1.5, height=max(h * scale, 1.0) * 1.5)
        ax = axes[0][0]
        ax.imshow(grid, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_axis_off()
        if title:
            ax.set_title(title)
    return save_figure(fig, path)


def memory_heatmap(weights: np.ndarray, path: str, title: str = "terminal memory") -> str:
    with plt.rc_context(STYLE):
        fig, axes = new_figure(width=3.2, height=3.0)
        ax = axes[0][0]
        bound = float(np.max(np.abs(weights))) or 1.0
        im = ax.imshow(weights, cmap="RdBu_r", vmin=-bound, vmax=bound, interpolation="nearest")
        ax.set_xlabel("output unit")
        ax.set_ylabel("input unit")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return save_figure(fig, path)


def equilibrium_trace(history: list[np.ndarray], path: str, bound: float | None = None) -> str:
    """Largest equilibrium response per iteration of the fixed-point scheme."""
    peaks = [float(np.max(g)) if g.size else 0.0 for g in history]
    with plt.rc_context(STYLE):
        fig, axes = new_figure()
        ax = axes[0][0]
        ax.plot(range(len(peaks)), peaks, marker=".", ms=3)
        if bound is not None:
            ax.axhline(bound, color=COLORS[3], ls="--", lw=1, label="bound")
            ax.legend()
        ax.set_xlabel("iteration")
        ax.set_ylabel("max response")
    return save_figure(fig, path)
