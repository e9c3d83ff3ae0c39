"""Two-stage detector: heatmap proposals, crop classification, NMS.

detect() runs the whole chain on one image. Tiling makes small faces
visible: each tile is blown up to the backend's input size before
inference, so the response channel sees every face near its trained scale
in at least one tile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backends.base import InferenceBackend
from .geometry import BoundingBox
from .heatmap import (
    Heatmap,
    TilePlacement,
    merge_max,
    normalize_byte,
    resize_bicubic,
    resize_image,
    tile_image,
)
from .proposals import ProposalConfig, scan_proposals


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectConfig:
    osc_channel: int
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    nms_iou: float = 0.3
    accept_score: float = 0.5
    window_sides: tuple[int, ...] | None = None
    tile_stride_ratio: float = 0.5

    def __post_init__(self) -> None:
        if self.osc_channel < 0:
            raise ValueError(f"osc_channel must be >= 0, got {self.osc_channel}")
        if not 0 < self.nms_iou < 1:
            raise ValueError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if not 0 <= self.accept_score <= 1:
            raise ValueError(f"accept_score must be in [0, 1], got {self.accept_score}")


def default_tile_sides(width: int, height: int) -> list[int]:
    """Tile sides at full, half, and quarter of the smaller image dimension."""
    m = min(width, height)
    sides = [m, math.ceil(m / 2 - 0.5), math.ceil(m / 4 - 0.5)]
    return sorted({s for s in sides if s >= 2}, reverse=True)


def crop_resized(image: np.ndarray, box: BoundingBox, side: int) -> np.ndarray:
    """Crop a box (clipped to the image) and bicubic-resize it to side x side."""
    h, w = image.shape[:2]
    x0 = max(0, int(math.floor(box.x)))
    y0 = max(0, int(math.floor(box.y)))
    x1 = min(w, int(math.ceil(box.x2)))
    y1 = min(h, int(math.ceil(box.y2)))
    if x1 - x0 < 2 or y1 - y0 < 2:
        raise ValueError(f"box {box} leaves no croppable image region")
    return resize_image(image[y0:y1, x0:x1], side, side)


def response_heatmap(
    backend: InferenceBackend, image: np.ndarray, cfg: DetectConfig
) -> Heatmap:
    """Byte-scale response map of the configured channel over the whole image."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {img.shape}")
    h, w = img.shape[:2]
    side = backend.descriptor.input_side
    sides = (
        list(cfg.window_sides)
        if cfg.window_sides is not None
        else default_tile_sides(w, h)
    )
    placements = []
    for rect in tile_image(w, h, sides, cfg.tile_stride_ratio):
        crop = crop_resized(img, rect, side)
        feats = backend.infer_features(crop)
        channel = Heatmap(feats.channel(cfg.osc_channel))
        placements.append(
            TilePlacement(rect, resize_bicubic(channel, int(rect.w), int(rect.h)))
        )
    return normalize_byte(merge_max(placements, w, h))


def classify_proposals(
    backend: InferenceBackend,
    image: np.ndarray,
    boxes: Sequence[BoundingBox],
    accept_score: float = 0.5,
) -> list[Detection]:
    """Batch-score proposal crops; keep those at or above accept_score."""
    if not boxes:
        return []
    img = np.asarray(image)
    side = backend.descriptor.input_side
    crops = []
    for i, box in enumerate(boxes):
        try:
            crops.append(crop_resized(img, box, side))
        except ValueError as e:
            raise ValueError(f"proposal {i}: {e}") from e
    scores = backend.infer_class_scores(crops)
    return [
        Detection(box, float(score))
        for box, score in zip(boxes, scores)
        if score >= accept_score
    ]


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Highest score wins each round and removes every remaining detection
    overlapping it with iou > iou_threshold. Equal scores keep input order.
    Output is score-descending.
    """
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    x = np.array([dets[i].box.x for i in order])
    y = np.array([dets[i].box.y for i in order])
    x2 = np.array([dets[i].box.x2 for i in order])
    y2 = np.array([dets[i].box.y2 for i in order])
    area = (x2 - x) * (y2 - y)
    alive = np.ones(len(order), dtype=bool)
    kept: list[Detection] = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(dets[order[i]])
        rest = alive.copy()
        rest[: i + 1] = False
        idx = np.nonzero(rest)[0]
        if idx.size == 0:
            continue
        iw = np.minimum(x2[i], x2[idx]) - np.maximum(x[i], x[idx])
        ih = np.minimum(y2[i], y2[idx]) - np.maximum(y[i], y[idx])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        inter[(iw <= 0) | (ih <= 0)] = 0.0
        overlap = inter / (area[i] + area[idx] - inter)
        alive[idx[overlap > iou_threshold]] = False
    return kept


def detect(
    backend: InferenceBackend, image: np.ndarray, cfg: DetectConfig
) -> list[Detection]:
    """Run the full pipeline on one image; deterministic for a fixed backend."""
    heat = response_heatmap(backend, image, cfg)
    boxes = scan_proposals(heat, cfg.proposal)
    dets = classify_proposals(backend, image, boxes, cfg.accept_score)
    return nms(dets, cfg.nms_iou)
