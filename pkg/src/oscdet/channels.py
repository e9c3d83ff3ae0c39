"""Channel ranking: find the hidden-layer channel that fires on faces.

For every channel we upsample its feature map to input resolution and
compare mean intensity inside annotated face boxes against mean intensity
everywhere else. The channel with the widest margin is the one the detection
pipeline should read.

Scores are means of the raw bicubic interpolant, so they are linear in the
activations. That lets the per-box mean be folded into row/column sums of
the resize weight matrices, and one matrix triple product scores every
channel at once without materializing any upsampled map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import InferenceBackend
from .geometry import BoundingBox
from .heatmap import _pixel_range, _resize_weights, resize_image

DatasetItem = tuple[np.ndarray, Sequence[BoundingBox]]


@dataclass(frozen=True)
class ChannelScore:
    channel: int
    inside: float
    outside: float

    @property
    def margin(self) -> float:
        return self.inside - self.outside


def _scaled_pixel_rects(
    boxes: Sequence[BoundingBox], sx: float, sy: float, side: int
) -> list[tuple[int, int, int, int]]:
    """Boxes mapped to resized-image coords, as integer pixel ranges."""
    rects = []
    for b in boxes:
        x0, x1 = _pixel_range(b.x * sx, b.x2 * sx, side)
        y0, y1 = _pixel_range(b.y * sy, b.y2 * sy, side)
        if x0 >= x1 or y0 >= y1:
            raise ValueError(f"box {b} covers no pixel after resize")
        rects.append((y0, y1, x0, x1))
    return rects


def _union_bands(
    rects: Sequence[tuple[int, int, int, int]],
) -> list[tuple[int, int, list[tuple[int, int]]]]:
    """Decompose a union of rects into y-bands of merged x-intervals."""
    edges = sorted({e for r in rects for e in (r[0], r[1])})
    bands = []
    for a, b in zip(edges, edges[1:]):
        spans = sorted(
            (x0, x1) for y0, y1, x0, x1 in rects if y0 <= a and y1 >= b
        )
        if not spans:
            continue
        merged = [list(spans[0])]
        for x0, x1 in spans[1:]:
            if x0 <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], x1)
            else:
                merged.append([x0, x1])
        bands.append((a, b, [(x0, x1) for x0, x1 in merged]))
    return bands


def rank_channels(
    dataset: Sequence[DatasetItem],
    backend: InferenceBackend,
    layer: str | None = None,
) -> list[ChannelScore]:
    """Score every channel over an annotated dataset, best margin first.

    Each item is (image, face boxes) with boxes in that image's coordinates.
    Images are resized to the backend's input size, boxes along with them.
    Ties in margin break toward the lower channel index.
    """
    if layer is not None and layer != backend.descriptor.feature_layer:
        raise ValueError(
            f"backend serves layer {backend.descriptor.feature_layer!r}, "
            f"not {layer!r}"
        )
    if not dataset:
        raise ValueError("empty ranking dataset")
    side = backend.descriptor.input_side
    inside_total = None
    outside_total = None
    for idx, (image, boxes) in enumerate(dataset):
        img = np.asarray(image)
        if not boxes:
            raise ValueError(f"dataset image {idx} has no face boxes")
        if img.shape[:2] != (side, side):
            sx = side / img.shape[1]
            sy = side / img.shape[0]
            img = resize_image(img, side, side)
        else:
            sx = sy = 1.0
        rects = _scaled_pixel_rects(boxes, sx, sy, side)
        feats = backend.infer_features(img).values
        grid_h, grid_w = feats.shape[1], feats.shape[2]
        wy = _resize_weights(grid_h, side)
        wx = _resize_weights(grid_w, side)

        inside = np.zeros(feats.shape[0])
        for y0, y1, x0, x1 in rects:
            u = wy[y0:y1].sum(axis=0)
            v = wx[x0:x1].sum(axis=0)
            npix = (y1 - y0) * (x1 - x0)
            inside += np.einsum("j,cjk,k->c", u, feats, v) / npix
        inside /= len(rects)

        total = np.einsum(
            "j,cjk,k->c", wy.sum(axis=0), feats, wx.sum(axis=0)
        )
        union_sum = np.zeros(feats.shape[0])
        union_npix = 0
        for a, b, spans in _union_bands(rects):
            u = wy[a:b].sum(axis=0)
            for x0, x1 in spans:
                v = wx[x0:x1].sum(axis=0)
                union_sum += np.einsum("j,cjk,k->c", u, feats, v)
                union_npix += (b - a) * (x1 - x0)
        if union_npix >= side * side:
            raise ValueError(f"dataset image {idx}: boxes cover the whole image")
        outside = (total - union_sum) / (side * side - union_npix)

        if inside_total is None:
            inside_total = inside
            outside_total = outside
        else:
            inside_total += inside
            outside_total += outside

    n = len(dataset)
    scores = [
        ChannelScore(c, inside_total[c] / n, outside_total[c] / n)
        for c in range(len(inside_total))
    ]
    scores.sort(key=lambda s: (-s.margin, s.channel))
    return scores
