"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_pck_curve(
    curve: Sequence[tuple[float, float]],
    path: str | Path,
    title: str = "3D PCK",
) -> None:
    thresholds = [t for t, _ in curve]
    fractions = [f for _, f in curve]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thresholds, fractions, lw=2)
    ax.set_xlabel("threshold [mm]")
    ax.set_ylabel("fraction of joints within threshold")
    ax.set_xlim(thresholds[0], thresholds[-1])
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_history(history: Sequence[dict], path: str | Path) -> None:
    iterations = [h["iteration"] for h in history]
    totals = [h["total"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iterations, totals, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
