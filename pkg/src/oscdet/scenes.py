"""Synthetic disc scenes: reproducible images the synthetic backend responds to.

Scenes are dark canvases with bright antialiased discs plus mild sensor-style
noise. Exercises the whole pipeline without any real photographs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoundingBox


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    r: float

    def box(self) -> BoundingBox:
        """Tight bounding box of the disc."""
        return BoundingBox(self.cx - self.r, self.cy - self.r, 2 * self.r, 2 * self.r)


def disc_scene(
    width: int,
    height: int,
    discs: Sequence[Disc],
    seed: int = 0,
    background: float = 25.0,
    foreground: float = 230.0,
    noise_sigma: float = 6.0,
    edge: float = 1.5,
) -> np.ndarray:
    """Render discs onto a noisy canvas; returns (height, width, 3) uint8 RGB."""
    rng = np.random.default_rng(seed)
    canvas = np.full((height, width), background)
    y, x = np.mgrid[0:height, 0:width]
    for disc in discs:
        d = np.hypot(x - disc.cx, y - disc.cy)
        alpha = np.clip((disc.r - d) / edge, 0.0, 1.0)
        canvas += alpha * (foreground - background)
    canvas += rng.normal(0.0, noise_sigma, canvas.shape)
    gray = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)
