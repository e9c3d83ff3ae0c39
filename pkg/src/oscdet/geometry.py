"""Axis-aligned boxes, upright ellipses, and the overlap measures shared by the pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Pixel rectangle with top-left corner (x, y) and size (w, h), origin at top-left."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Ellipse:
    """Ellipse with semi-axis `ra` along y and `rb` along x when angle == 0.

    `angle` rotates the ellipse counterclockwise (radians). Everything this
    package produces is upright (angle 0); rotated ellipses only enter as
    ground-truth annotations.
    """

    cx: float
    cy: float
    ra: float
    rb: float
    angle: float = 0.0

    def __post_init__(self) -> None:
        if not (self.ra > 0 and self.rb > 0):
            raise ValueError(f"ellipse semi-axes must be positive, got ra={self.ra} rb={self.rb}")


Region = Union[BoundingBox, Ellipse]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def extend_box_vertical(b: BoundingBox, factor: float = 0.40) -> BoundingBox:
    """Grow a box's height by `factor` about its center; width and center stay fixed."""
    if factor < 0:
        raise ValueError(f"extension factor must be >= 0, got {factor}")
    new_h = b.h * (1.0 + factor)
    return BoundingBox(b.x, b.cy - new_h / 2.0, b.w, new_h)


def inscribe_ellipse(b: BoundingBox) -> Ellipse:
    """Largest upright ellipse contained in the box (touches all four sides)."""
    return Ellipse(cx=b.cx, cy=b.cy, ra=b.h / 2.0, rb=b.w / 2.0, angle=0.0)


def region_box(r: Region) -> BoundingBox:
    """Tight axis-aligned bounding box of a region (boxes pass through)."""
    if isinstance(r, BoundingBox):
        return r
    xmin, ymin, xmax, ymax = _extent(r)
    return BoundingBox(xmin, ymin, xmax - xmin, ymax - ymin)


def _extent(r: Region) -> tuple[float, float, float, float]:
    """(xmin, ymin, xmax, ymax) of the region's tight axis-aligned bounds."""
    if isinstance(r, BoundingBox):
        return r.x, r.y, r.x2, r.y2
    c, s = math.cos(r.angle), math.sin(r.angle)
    hx = math.hypot(r.rb * c, r.ra * s)
    hy = math.hypot(r.rb * s, r.ra * c)
    return r.cx - hx, r.cy - hy, r.cx + hx, r.cy + hy


def _mask(r: Region, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    """Boolean (h, w) grid of pixels whose center (i+0.5, j+0.5) lies inside the region.

    (x0, y0) is the window's top-left pixel index on the host image grid, so
    masks taken over different windows stay mutually consistent.
    """
    px = x0 + np.arange(w) + 0.5
    py = y0 + np.arange(h) + 0.5
    if isinstance(r, BoundingBox):
        in_x = (px >= r.x) & (px < r.x2)
        in_y = (py >= r.y) & (py < r.y2)
        return in_y[:, None] & in_x[None, :]
    dx = px[None, :] - r.cx
    dy = py[:, None] - r.cy
    c, s = math.cos(r.angle), math.sin(r.angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / r.rb) ** 2 + (v / r.ra) ** 2 <= 1.0


def rasterize(r: Region) -> tuple[np.ndarray, int, int]:
    """Rasterize a region on the integer pixel grid.

    Returns (mask, x0, y0): a boolean array over the region's integer
    bounding window and that window's top-left pixel index.
    """
    xmin, ymin, xmax, ymax = _extent(r)
    x0, y0 = math.floor(xmin), math.floor(ymin)
    w = max(1, math.ceil(xmax) - x0)
    h = max(1, math.ceil(ymax) - y0)
    return _mask(r, x0, y0, w, h), x0, y0


def region_iou(a: Region, b: Region) -> float:
    """IoU of two regions, measured by counting pixels on the shared integer grid.

    Raises ValueError if either region rasterizes to zero pixels.
    """
    ax0, ay0, ax1, ay1 = _extent(a)
    bx0, by0, bx1, by1 = _extent(b)
    x0, y0 = math.floor(min(ax0, bx0)), math.floor(min(ay0, by0))
    w = max(1, math.ceil(max(ax1, bx1)) - x0)
    h = max(1, math.ceil(max(ay1, by1)) - y0)
    ma = _mask(a, x0, y0, w, h)
    mb = _mask(b, x0, y0, w, h)
    na = int(ma.sum())
    nb = int(mb.sum())
    if na == 0 or nb == 0:
        raise ValueError("region rasterized to zero pixels")
    inter = int(np.count_nonzero(ma & mb))
    return inter / (na + nb - inter)
