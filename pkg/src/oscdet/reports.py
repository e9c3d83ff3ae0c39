"""Report rendering: delimited score tables and matplotlib figures.

Everything here writes files and returns nothing; figure routines share
one Agg-backed pyplot so they work headless and rerun byte-identically.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
import numpy as np
from PIL import Image

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .channels import ChannelScore  # noqa: E402
from .evaluation import EvalCurve  # noqa: E402
from .heatmap import BYTE, Heatmap  # noqa: E402

CHANNEL_FIELDS = ("channel", "inside", "outside", "margin")


def write_channel_csv(scores: Sequence[ChannelScore], path: str | Path) -> None:
    """Channel table in the given order (rank order upstream), margins included."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CHANNEL_FIELDS)
        for s in scores:
            writer.writerow(
                [s.channel, f"{s.inside:.10g}", f"{s.outside:.10g}", f"{s.margin:.10g}"]
            )


def read_channel_csv(path: str | Path) -> list[ChannelScore]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CHANNEL_FIELDS:
            raise ValueError(f"channel table {path} has header {reader.fieldnames}")
        return [
            ChannelScore(int(r["channel"]), float(r["inside"]), float(r["outside"]))
            for r in reader
        ]


def plot_channel_scores(scores: Sequence[ChannelScore], path: str | Path) -> None:
    """Per-channel inside and outside means, best-margin channel marked."""
    if not scores:
        raise ValueError("no channel scores to plot")
    ordered = sorted(scores, key=lambda s: s.channel)
    channels = [s.channel for s in ordered]
    best = max(scores, key=lambda s: (s.margin, -s.channel))
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(channels, [s.inside for s in ordered],lw=0.8, label="inside faces")
    ax.plot(channels, [s.outside for s in ordered], lw=0.8, label="outside faces")
    ax.axvline(best.channel, color="red", lw=0.8, ls="--",
               label=f"selected channel {best.channel}")
    ax.set_xlabel("channel")
    ax.set_ylabel("mean response")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_roc_curves(curves: Mapping[str, EvalCurve], path: str | Path) -> None:
    """True positive rate against false positive count, one line per label."""
    if not curves:
        raise ValueError("no curves to plot")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, curve in curves.items():
        fps = [fp for fp, _ in curve.points]
        tprs = [tpr for _, tpr in curve.points]
        ax.plot(fps, tprs, marker=".", ms=3, lw=1.0, label=label)
    ax.set_xlabel("false positives")
    ax.set_ylabel("true positive rate")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pr_curve(
    recalls: Sequence[float],
    precisions: Sequence[float],
    ap: float,
    path: str | Path,
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(list(recalls), list(precisions), marker=".", ms=3, lw=1.0)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.05)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"AP = {ap:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_heatmap_png(heatmap: Heatmap, path: str | Path) -> None:
    """Byte-scale heatmap as a grayscale PNG."""
    if heatmap.scale != BYTE:
        raise ValueError("heatmap must be byte scale; normalize it first")
    Image.fromarray(np.rint(heatmap.values).astype(np.uint8), "L").save(path)
