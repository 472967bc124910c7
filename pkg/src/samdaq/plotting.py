"""Figures written next to the CSV / markdown reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FRAME_COLOR = "grey"


def _tidy(ax, xlabel=None, ylabel=None, title=None):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    if xlabel:
        ax.set_xlabel(xlabel)
    if ylabel:
        ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, color=FRAME_COLOR)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(history, path, smooth: int = 25) -> Path:
    """history rows: (iter, L_pred, L_inter, L_total, wall_ms)."""
    arr = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for col, label in ((3, "L_total"), (1, "L_pred"), (2, "L_inter")):
        y = arr[:, col]
        if smooth > 1 and len(y) > smooth:
            y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
        ax.plot(arr[: len(y), 0], y, label=label, lw=1.2)
    ax.set_yscale("log")
    ax.legend(frameon=False)
    _tidy(ax, "iteration", "loss", "training loss")
    return _save(fig, path)


def plot_metric_table(rows, path, title: str) -> Path:
    """Grouped bars of E/S/F and MAE for each ablation row; rows: (name, EvalResult)."""
    names = [r[0] for r in rows]
    vals = np.array([r[1].row() for r in rows])
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5), gridspec_kw={"width_ratios": [3, 1.4]})
    width = 0.27
    for k, label in enumerate(("E_xi", "S_alpha", "F_beta")):
        ax1.bar(x + (k - 1) * width, vals[:, k], width, label=label)
    ax1.set_xticks(x, names, rotation=25, ha="right", fontsize=8)
    lo = max(0.0, float(vals[:, :3].min()) - 0.05)
    ax1.set_ylim(lo, 1.0)
    ax1.legend(frameon=False, fontsize=8)
    _tidy(ax1, None, "score (higher is better)", title)
    ax2.bar(x, vals[:, 3], 0.6, color="tab:red")
    ax2.set_xticks(x, names, rotation=25, ha="right", fontsize=8)
    _tidy(ax2, None, "MAE (lower is better)")
    return _save(fig, path)


def plot_memory(rows, path) -> Path:
    """rows: (variant, trainable, total, peak_bytes)."""
    names = [r[0] for r in rows]
    peak = np.array([r[3] for r in rows], dtype=float) / 2 ** 20
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(names, peak, color=["tab:green" if n == "parallel" else "tab:grey" for n in names])
    for bar, r in zip(bars, rows):
        ax.annotate(f"{r[1] / 1e3:.0f}k / {r[2] / 1e3:.0f}k", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=7, color=FRAME_COLOR)
    _tidy(ax, None, "peak training memory (MiB)", "one optimizer step")
    return _save(fig, path)
