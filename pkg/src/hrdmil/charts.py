"""Standalone SVG charts rendered from report JSON. Presentation only."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "hrdmil", "svg.fonttype": "none", "font.size": 9}
_META = {"Date": None, "Creator": "hrdmil"}
BASELINE_COLOR = "#1f77b4"
UPSAMPLED_COLOR = "#ff7f0e"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def _bin_labels(edges):
    return [f"{lo:.0f}-{hi:.0f}" for lo, hi in zip(edges[:-1], edges[1:])]


def histogram_pair(edges, original, upsampled, path, title="Original vs. upsampled target distribution"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        labels = _bin_labels(edges)
        x = range(len(labels))
        ax.bar([i - 0.2 for i in x], original, width=0.4, label="original", color=BASELINE_COLOR)
        ax.bar([i + 0.2 for i in x], upsampled, width=0.4, label="upsampled", color=UPSAMPLED_COLOR)
        ax.set_xticks(list(x), labels, rotation=30)
        ax.set_xlabel("target bin")
        ax.set_ylabel("instances")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def binned_rmse_bars(edges, series: Mapping[str, Sequence[Optional[float]]], path,
                     title="Binned RMSE"):
    colors = [BASELINE_COLOR, UPSAMPLED_COLOR, "#2ca02c", "#d62728", "#9467bd"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        labels = _bin_labels(edges)
        width = 0.8 / max(1, len(series))
        for j, (name, vals) in enumerate(series.items()):
            xs = [i - 0.4 + width * (j + 0.5) for i in range(len(labels))]
            ys = [0.0 if v is None else v for v in vals]
            ax.bar(xs, ys, width=width, label=name, color=colors[j % len(colors)])
        ax.set_xticks(list(range(len(labels))), labels, rotation=30)
        ax.set_xlabel("true target bin")
        ax.set_ylabel("RMSE")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def metric_lines(series: Mapping[str, Sequence[tuple[float, float]]], path, ylabel="median AUROC",
                 xlabel="bagsize", title=None):
    """One line per series of ``(x, y)`` points; used for bagsize sweeps and strategy curves."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for name, pts in series.items():
            pts = sorted(pts)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def rank_bars(mean_ranks: Mapping[str, float], path, title="Mean per-fold rank (1 = best)"):
    with plt.rc_context(_RC):
        items = sorted(mean_ranks.items(), key=lambda kv: (kv[1], kv[0]))
        fig, ax = plt.subplots(figsize=(5, 0.4 * len(items) + 1.2))
        ax.barh([k for k, _ in items], [v for _, v in items], color=BASELINE_COLOR)
        ax.invert_yaxis()
        ax.set_xlabel("mean rank")
        ax.set_title(title)
        return _save(fig, path)
