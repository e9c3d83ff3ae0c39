"""Heatmap construction: bicubic resize, face-score, tiling, max-merge, quantization.

A heatmap is a single channel's response grid. The pipeline upsamples the
coarse grid to image resolution, merges overlapping tile responses by
per-pixel maximum, then normalizes to the 0..255 byte scale that the
proposal threshold is defined on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import BoundingBox

RAW = "raw"
BYTE = "byte"


@dataclass(frozen=True)
class Heatmap:
    """Intensity grid, row-major (values[y, x]). Treat as immutable.

    scale "raw" means nonnegative unbounded intensities; "byte" means 0..255.
    """

    values: np.ndarray
    scale: str = RAW

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"heatmap must be a non-empty 2-D grid, got shape {v.shape}")
        if self.scale not in (RAW, BYTE):
            raise ValueError(f"unknown heatmap scale {self.scale!r}")
        if not np.all(v >= 0):
            raise ValueError("heatmap values must be nonnegative")
        if self.scale == BYTE and not np.all(v <= 255):
            raise ValueError("byte-scale heatmap values must be <= 255")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TilePlacement:
    """A sub-image's heatmap together with where it sits on the original image."""

    rect: BoundingBox
    heatmap: Heatmap


def _keys_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic kernel; a = -0.5 is Catmull-Rom (interpolates samples exactly)."""
    ax = np.abs(x)
    near = (a + 2) * ax**3 - (a + 3) * ax**2 + 1
    far = a * ax**3 - 5 * a * ax**2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


@lru_cache(maxsize=256)
def _resize_weights(n_src: int, n_dst: int) -> np.ndarray:
    """(n_dst, n_src) bicubic weight matrix, endpoints aligned, edges clamped."""
    if n_dst > 1:
        t = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    else:
        t = np.array([(n_src - 1) / 2.0])
    i0 = np.floor(t).astype(int)
    f = t - i0
    offsets = np.array([-1, 0, 1, 2])
    taps = np.clip(i0[:, None] + offsets[None, :], 0, n_src - 1)
    wts = _keys_kernel(f[:, None] - offsets[None, :])
    w = np.zeros((n_dst, n_src))
    rows = np.repeat(np.arange(n_dst)[:, None], 4, axis=1)
    np.add.at(w, (rows, taps), wts)
    return w


def resize2d(values: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Separable bicubic resize of a 2-D array. No clamping."""
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target size must be >= 1, got {target_w}x{target_h}")
    h, w = values.shape
    if h < 2 or w < 2:
        raise ValueError(f"source grid must be at least 2x2, got {w}x{h}")
    wy = _resize_weights(h, target_h)
    wx = _resize_weights(w, target_w)
    return wy @ values @ wx.T


def resize_bicubic(
    src: Heatmap, target_w: int, target_h: int, clamp_negative: bool = True
) -> Heatmap:
    """Bicubic-resize a heatmap; interpolation undershoot is clamped to 0 by default."""
    out = resize2d(src.values, target_w, target_h)
    if clamp_negative:
        np.maximum(out, 0.0, out=out)
    if src.scale == BYTE:
        np.minimum(out, 255.0, out=out)
    return Heatmap(out, scale=src.scale)


@lru_cache(maxsize=None)
def _resize_weights_f32(n_src: int, n_dst: int) -> np.ndarray:
    return _resize_weights(n_src, n_dst).astype(np.float32)


def resize_image(image: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bicubic resize of an (H, W, 3) uint8 image, values clamped to 0..255.

    Single precision: plenty for an 8-bit target and twice as fast.
    """
    img = np.asarray(image, dtype=np.float32)
    wy = _resize_weights_f32(img.shape[0], target_h)
    wx = _resize_weights_f32(img.shape[1], target_w)
    tmp = np.tensordot(wy, img, axes=(1, 0))
    out = np.einsum("hwc,tw->htc", tmp, wx, optimize=True)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _pixel_range(lo: float, hi: float, bound: int) -> tuple[int, int]:
    """Integer sample positions i with lo <= i < hi, clipped to [0, bound)."""
    start = max(0, math.ceil(lo))
    stop = min(bound, math.ceil(hi))
    return start, stop


def face_score(h: Heatmap, b: BoundingBox) -> float:
    """Mean intensity over the integer pixel positions inside the box.

    The box is clipped to the heatmap first; a box covering no pixel is an error.
    """
    x0, x1 = _pixel_range(b.x, b.x2, h.width)
    y0, y1 = _pixel_range(b.y, b.y2, h.height)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"box {b} covers no heatmap pixel")
    return float(h.values[y0:y1, x0:x1].mean())


def _boxes_mask(h: Heatmap, boxes: Sequence[BoundingBox]) -> np.ndarray:
    mask = np.zeros((h.height, h.width), dtype=bool)
    for b in boxes:
        x0, x1 = _pixel_range(b.x, b.x2, h.width)
        y0, y1 = _pixel_range(b.y, b.y2, h.height)
        mask[y0:y1, x0:x1] = True
    return mask


def outside_score(h: Heatmap, boxes: Sequence[BoundingBox]) -> float:
    """Mean intensity over pixels not covered by any box."""
    mask = _boxes_mask(h, boxes)
    if mask.all():
        raise ValueError("boxes cover every heatmap pixel")
    return float(h.values[~mask].mean())


def _half_down(x: float) -> int:
    # round with ties going down: 113.5 -> 113, 22.75 -> 23
    return math.ceil(x - 0.5)


def slide_offsets(dim: int, side: int, stride_ratio: float) -> list[int]:
    """Window offsets along one axis: fixed stride plus a final edge-clamped stop."""
    if side > dim:
        raise ValueError(f"window side {side} exceeds image dimension {dim}")
    step = max(1, _half_down(side * stride_ratio))
    offsets = list(range(0, dim - side + 1, step))
    if offsets[-1] != dim - side:
        offsets.append(dim - side)
    return offsets


def tile_image(
    width: int, height: int, window_sides: Sequence[int], stride_ratio: float = 0.5
) -> list[BoundingBox]:
    """Square sliding-window placements at every requested size.

    Adjacent windows overlap by (1 - stride_ratio) of their side; a clamped
    final row/column guarantees full coverage. The whole-image rect is always
    part of the result.
    """
    if not window_sides:
        raise ValueError("window side list is empty")
    seen: set[tuple[float, float, float, float]] = set()
    rects: list[BoundingBox] = []

    def add(r: BoundingBox) -> None:
        key = (r.x, r.y, r.w, r.h)
        if key not in seen:
            seen.add(key)
            rects.append(r)

    for side in window_sides:
        for y in slide_offsets(height, side, stride_ratio):
            for x in slide_offsets(width, side, stride_ratio):
                add(BoundingBox(float(x), float(y), float(side), float(side)))
    add(BoundingBox(0.0, 0.0, float(width), float(height)))
    return rects


def merge_max(tiles: Sequence[TilePlacement], canvas_w: int, canvas_h: int) -> Heatmap:
    """Combine tile heatmaps into one canvas by per-pixel maximum.

    Every tile's heatmap must already be resized to its rect's pixel size.
    Pixels no tile covers stay 0.
    """
    if not tiles:
        raise ValueError("no tiles to merge")
    canvas = np.zeros((canvas_h, canvas_w))
    for t in tiles:
        x, y = int(round(t.rect.x)), int(round(t.rect.y))
        w, h = int(round(t.rect.w)), int(round(t.rect.h))
        if t.heatmap.values.shape != (h, w):
            raise ValueError(
                f"tile heatmap is {t.heatmap.values.shape[::-1]}, rect wants {(w, h)}"
            )
        if x < 0 or y < 0 or x + w > canvas_w or y + h > canvas_h:
            raise ValueError(f"tile rect {t.rect} exceeds canvas {canvas_w}x{canvas_h}")
        region = canvas[y : y + h, x : x + w]
        np.maximum(region, t.heatmap.values, out=region)
    return Heatmap(canvas, scale=RAW)


def normalize_byte(h: Heatmap) -> Heatmap:
    """Linear min-max map onto 0..255; a constant heatmap maps to all zeros."""
    lo = float(h.values.min())
    hi = float(h.values.max())
    if hi <= lo:
        return Heatmap(np.zeros_like(h.values), scale=BYTE)
    out = (h.values - lo) * (255.0 / (hi - lo))
    return Heatmap(np.clip(out, 0.0, 255.0), scale=BYTE)


def quantize(h: Heatmap, levels: int) -> Heatmap:
    """Uniform gray-level quantization of a byte-scale heatmap to `levels` values."""
    if levels < 2:
        raise ValueError(f"need at least 2 quantization levels, got {levels}")
    if h.scale != BYTE:
        raise ValueError("quantize expects a byte-scale heatmap")
    bins = np.minimum(levels - 1, np.floor(h.values * levels / 256.0))
    return Heatmap(np.rint(bins * 255.0 / (levels - 1)), scale=BYTE)


def write_png(h: Heatmap, path) -> None:
    """Store a byte-scale heatmap as 8-bit grayscale PNG."""
    if h.scale != BYTE:
        raise ValueError("PNG export expects a byte-scale heatmap")
    Image.fromarray(np.rint(h.values).astype(np.uint8), mode="L").save(path)
