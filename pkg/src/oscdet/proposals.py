"""Proposal generation: multi-scale sliding window over the byte heatmap.

Candidate face windows are square boxes whose mean heatmap intensity beats
the threshold. Window sums come from one summed-area table, so scanning all
scales costs far less than cropping would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoundingBox
from .heatmap import BYTE, Heatmap, slide_offsets


@dataclass(frozen=True)
class ProposalConfig:
    threshold: float = 80.0
    window_sides: tuple[int, ...] | None = None
    stride_ratio: float = 0.25
    max_proposals: int = 2000
    ladder_min: int = 32
    ladder_ratio: float = math.sqrt(2.0)

    def __post_init__(self) -> None:
        if not 0 < self.threshold <= 255:
            raise ValueError(f"threshold must be in (0, 255], got {self.threshold}")
        if self.window_sides is not None and not self.window_sides:
            raise ValueError("window side list is empty; pass None for the default ladder")
        if not 0 < self.stride_ratio <= 1:
            raise ValueError(f"stride_ratio must be in (0, 1], got {self.stride_ratio}")
        if self.max_proposals < 1:
            raise ValueError(f"max_proposals must be >= 1, got {self.max_proposals}")


def geometric_ladder(min_side: int, max_side: int, ratio: float = math.sqrt(2.0)) -> list[int]:
    """Rounded geometric progression of window sides within [min_side, max_side]."""
    if min_side < 1 or ratio <= 1:
        raise ValueError("ladder needs min_side >= 1 and ratio > 1")
    sides: list[int] = []
    value = float(min_side)
    while True:
        side = math.ceil(value - 0.5)  # same half-down rounding as window stepping
        if side > max_side:
            break
        if not sides or side != sides[-1]:
            sides.append(side)
        value *= ratio
    return sides


def scan_proposals(h: Heatmap, cfg: ProposalConfig) -> list[BoundingBox]:
    """All windows scoring strictly above the threshold, best first.

    Scan order (side order, then row-major) breaks score ties; the list is
    truncated at cfg.max_proposals.
    """
    if h.scale != BYTE:
        raise ValueError("proposal scan expects a byte-scale heatmap")
    min_dim = min(h.width, h.height)
    if cfg.window_sides is not None:
        sides: Sequence[int] = cfg.window_sides
    else:
        if cfg.ladder_min > min_dim:
            return []
        sides = geometric_ladder(cfg.ladder_min, min_dim, cfg.ladder_ratio)

    sat = np.zeros((h.height + 1, h.width + 1))
    np.cumsum(np.cumsum(h.values, axis=0), axis=1, out=sat[1:, 1:])

    boxes: list[BoundingBox] = []
    scores: list[np.ndarray] = []
    for side in sides:
        if side > min_dim:
            continue  # cannot fit, so it contributes no windows
        xs = np.array(slide_offsets(h.width, side, cfg.stride_ratio))
        ys = np.array(slide_offsets(h.height, side, cfg.stride_ratio))
        sums = (
            sat[np.ix_(ys + side, xs + side)]
            - sat[np.ix_(ys, xs + side)]
            - sat[np.ix_(ys + side, xs)]
            + sat[np.ix_(ys, xs)]
        )
        means = sums / float(side * side)
        hit_y, hit_x = np.nonzero(means > cfg.threshold)
        for yi, xi in zip(hit_y, hit_x):
            boxes.append(BoundingBox(float(xs[xi]), float(ys[yi]), float(side), float(side)))
        scores.append(means[hit_y, hit_x])

    if not boxes:
        return []
    flat = np.concatenate(scores)
    order = np.argsort(-flat, kind="stable")[: cfg.max_proposals]
    return [boxes[i] for i in order]
