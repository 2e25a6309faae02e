"""Matplotlib figures written next to the CSV/JSON reports."""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def save_loss_curve(history, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(history)), history, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean L1 loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_metric_bars(report, path, title="evaluation"):
    names = sorted(report.metrics)
    vals = [report.metrics[k] for k in names]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 3.2))
    ax.bar(names, vals, color="#4878cf")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3g}", ha="center", va="bottom", fontsize=9)
    ax.set_title(f"{title} (n={report.count})")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def save_benchmark_bars(oracle_ms, net_ms, path):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(["oracle", "network"], [oracle_ms, net_ms],
           color=["#d1615d", "#4878cf"])
    ax.set_ylabel("ms / image")
    ax.set_yscale("log")
    ratio = oracle_ms / net_ms if net_ms > 0 else float("inf")
    ax.set_title(f"per-image render time ({ratio:.1f}x speedup)")
    for i, v in enumerate([oracle_ms, net_ms]):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=9)
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def save_image_grid(images, titles, path, cols=4):
    n = len(images)
    cols = min(cols, max(n, 1))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.3 * rows),
                             squeeze=False)
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        ax.axis("off")
        if i < n:
            ax.imshow(np.clip(images[i], 0.0, 1.0))
            ax.set_title(titles[i], fontsize=8)
    _save(fig, path)
