"""Toy training scenes: bright discs on dark noise, and masked counterparts.

The masked variant replaces the disc's bounding square with uniform byte
noise, mirroring how the data-preparation step hides annotated faces. A
generated set alternates visible (pos) and masked (neg) scenes and writes
a standard crop manifest, so the trainer can be exercised end to end
without any real data.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import MANIFEST_FIELDS


def disc_image(
    side: int,
    cx: float,
    cy: float,
    radius: float,
    seed: int = 0,
    background: float = 25.0,
    foreground: float = 230.0,
    noise_sigma: float = 6.0,
) -> np.ndarray:
    """One grayscale-ish RGB scene: an antialiased disc plus gaussian noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    dist = np.hypot(xx + 0.5 - cx, yy + 0.5 - cy)
    alpha = np.clip((radius - dist) / 1.5 + 0.5, 0.0, 1.0)
    gray = background + (foreground - background) * alpha
    gray = gray + rng.normal(0.0, noise_sigma, (side, side))
    gray = np.clip(gray, 0.0, 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def mask_square(image: np.ndarray, cx: float, cy: float, radius: float, seed: int) -> np.ndarray:
    """Copy with the disc's bounding square overwritten by byte noise."""
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    x0 = max(0, math.floor(cx - radius))
    y0 = max(0, math.floor(cy - radius))
    x1 = min(w, math.ceil(cx + radius))
    y1 = min(h, math.ceil(cy + radius))
    out = image.copy()
    if x1 > x0 and y1 > y0:
        out[y0:y1, x0:x1] = rng.integers(0, 256, (y1 - y0, x1 - x0, 3), dtype=np.uint8)
    return out


def write_toy_set(
    out_dir: str | Path, count: int = 200, side: int = 160, seed: int = 0
) -> Path:
    """Write `count` scenes (alternating pos/neg) and return the manifest path."""
    if count < 2:
        raise ValueError(f"need at least 2 scenes for both classes, got {count}")
    out = Path(out_dir)
    (out / "pos").mkdir(parents=True, exist_ok=True)
    (out / "neg").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        rng = np.random.default_rng(seed + i)
        radius = float(rng.uniform(side * 0.15, side * 0.34))
        cx = float(rng.uniform(radius + 5, side - radius - 5))
        cy = float(rng.uniform(radius + 5, side - radius - 5))
        img = disc_image(side, cx, cy, radius, seed=seed + i)
        if i % 2:
            img = mask_square(img, cx, cy, radius, seed=seed + i)
            rel = f"neg/scene_{i:04d}.png"
            rows.append((rel, "neg", f"scene_{i:04d}", "mask_square"))
        else:
            rel = f"pos/scene_{i:04d}.png"
            rows.append((rel, "pos", f"scene_{i:04d}", "disc"))
        Image.fromarray(img).save(out / rel)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    return manifest
