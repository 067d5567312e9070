"""Figure rendering for the report-producing CLI paths.

Every figure is written next to its delimited data file so the plots can
always be regenerated from the CSV/JSON alone.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .classify import EvalReport
from .features import Dataset

_SCHEME_STYLE = {
    "ours": {"color": "tab:blue", "marker": "o"},
    "qi-xie": {"color": "tab:orange", "marker": "s"},
    "xiang": {"color": "tab:green", "marker": "^"},
    "kumar": {"color": "tab:red", "marker": "v"},
    "chen": {"color": "tab:purple", "marker": "d"},
}


def save_overhead_figures(rows: list[dict], out_prefix: str) -> list[str]:
    """Line plots of time and byte cost vs n, one curve per scheme."""
    paths = []
    for metric, ylabel, suffix in (
        ("time_ms", "computation overhead (ms)", "_time.png"),
        ("bytes", "communication cost (bytes)", "_bytes.png"),
    ):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        by_scheme: dict[str, list[tuple[int, float]]] = {}
        for row in rows:
            by_scheme.setdefault(row["scheme"], []).append((row["n"], row[metric]))
        for scheme, pts in by_scheme.items():
            pts.sort()
            xs, ys = zip(*pts)
            style = _SCHEME_STYLE.get(scheme, {})
            ax.plot(xs, ys, label=scheme, markevery=max(1, len(xs) // 8), **style)
        ax.set_xlabel("authenticated messages n")
        ax.set_ylabel(ylabel)
        ax.set_yscale("log")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = out_prefix + suffix
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def save_confusion_figure(report: EvalReport, path: str) -> str:
    """Heat map of the confusion matrix, true devices on rows."""
    n = len(report.classes)
    fig, ax = plt.subplots(figsize=(max(4.5, 0.35 * n + 2),) * 2)
    im = ax.imshow(report.confusion, cmap="Blues")
    ax.set_xticks(range(n), report.classes, rotation=90, fontsize=7)
    ax.set_yticks(range(n), report.classes, fontsize=7)
    ax.set_xlabel("predicted device")
    ax.set_ylabel("true device")
    if n <= 20:
        vmax = report.confusion.max() or 1
        for i in range(n):
            for j in range(n):
                v = report.confusion[i, j]
                if v:
                    ax.text(
                        j, i, str(v), ha="center", va="center", fontsize=6,
                        color="white" if v > 0.6 * vmax else "black",
                    )
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(f"accuracy {report.accuracy:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_feature_histograms(dataset: Dataset, path: str) -> str:
    """Pooled CFO and skew histograms with fitted Gaussian overlays."""
    cfo = np.array([row.cfo_hz for row in dataset.rows])
    skew = np.array([row.skew_deg for row in dataset.rows])
    fig, axes = plt.subplots(2, 1, figsize=(6.4, 6.4))
    for ax, values, label in ((axes[0], cfo, "CFO (Hz)"), (axes[1], skew, "skew (deg)")):
        ax.hist(values, bins=60, density=True, alpha=0.65, color="tab:blue")
        mu, sd = float(values.mean()), float(values.std())
        if sd > 0:
            xs = np.linspace(values.min(), values.max(), 300)
            ax.plot(
                xs,
                np.exp(-0.5 * ((xs - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
                color="tab:red",
                lw=1.5,
            )
        ax.set_xlabel(label)
        ax.set_ylabel("density")
        ax.set_title(f"mean {mu:.4g}, var {sd * sd:.4g}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
