"""PNG output: confusion matrices and F1-versus-openness curves."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import class_name  # noqa: E402


def plot_confusion(confusion: Sequence[Sequence[int]], path, title: str = "") -> None:
    cm = np.asarray(confusion)
    k = cm.shape[0] - 1
    names = [class_name(i, k) for i in range(k + 1)]
    fig, ax = plt.subplots(figsize=(1 + 0.6 * (k + 1), 1 + 0.6 * (k + 1)))
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(k + 1), names, rotation=45)
    ax.set_yticks(range(k + 1), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(k + 1):
        for j in range(k + 1):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def read_curves(path) -> dict[str, list[tuple[float, float]]]:
    """Series keyed by ``baseline_id`` (or one series named after the file).

    Rows sharing a series and openness are averaged over seeds.
    """
    acc: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            series = row.get("baseline_id") or Path(path).stem
            acc[series][float(row["openness"])].append(float(row["macro_f1"]))
    return {
        name: [(o, float(np.mean(v))) for o, v in sorted(points.items())]
        for name, points in acc.items()
    }


def plot_curves(curves: dict[str, list[tuple[float, float]]], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in curves.items():
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("openness")
    ax.set_ylabel("macro-F1")
    ax.grid(alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
