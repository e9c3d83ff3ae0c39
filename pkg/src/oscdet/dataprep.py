"""Training-data construction: noise-masked images, augmented face crops,
and IoU-targeted background crops.

Positive crops are the ground-truth face plus darkened, blurred, and
occluded variants. Negative crops are backgrounds at controlled overlap
with a face (IoU 0, 0.1, 0.2), double-sized face crops, and faces padded
with background, all of which teach the classifier to reject loose boxes.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageFilter

from .geometry import BoundingBox, Region, iou, region_box


@dataclass(frozen=True)
class Annotation:
    """Ground-truth regions for one image."""

    image_id: str
    regions: tuple[Region, ...]

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        object.__setattr__(self, "regions", tuple(self.regions))

    def boxes(self) -> list[BoundingBox]:
        return [region_box(r) for r in self.regions]


@dataclass(frozen=True)
class AugmentSpec:
    """Knobs for the face-crop variants.

    darken_gain multiplies every pixel, blur_radius is a box-blur radius in
    pixels, occlusion_fraction is the area share covered by a noise
    rectangle placed by the seed.
    """

    darken_gain: float = 0.4
    blur_radius: float = 3.0
    occlusion_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.darken_gain <= 1:
            raise ValueError(f"darken_gain must be in (0, 1], got {self.darken_gain}")
        if self.blur_radius < 0:
            raise ValueError(f"blur_radius must be >= 0, got {self.blur_radius}")
        if not 0 <= self.occlusion_fraction < 1:
            raise ValueError(
                f"occlusion_fraction must be in [0, 1), got {self.occlusion_fraction}"
            )


def _pixel_bounds(
    box: BoundingBox, width: int, height: int
) -> tuple[int, int, int, int]:
    """Integer crop bounds covering the box, clipped to the image."""
    x0 = max(0, math.floor(box.x))
    y0 = max(0, math.floor(box.y))
    x1 = min(width, math.ceil(box.x2))
    y1 = min(height, math.ceil(box.y2))
    return x0, y0, x1, y1


def _check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected a uint8 RGB image, got {img.dtype} {img.shape}")
    return img


def mask_faces(
    image: np.ndarray, boxes: Sequence[BoundingBox], seed: int = 0
) -> np.ndarray:
    """Replace every pixel inside the boxes with uniform per-channel noise.

    Pixels outside the boxes are bit-identical to the input. The same
    image, boxes, and seed always produce the same output.
    """
    img = _check_image(image)
    out = img.copy()
    h, w = out.shape[:2]
    rng = np.random.default_rng(seed)
    for box in boxes:
        x0, y0, x1, y1 = _pixel_bounds(box, w, h)
        if x1 <= x0 or y1 <= y0:
            continue
        out[y0:y1, x0:x1] = rng.integers(
            0, 256, size=(y1 - y0, x1 - x0, 3), dtype=np.uint8
        )
    return out


def augment_face(crop: np.ndarray, spec: AugmentSpec) -> list[np.ndarray]:
    """Return [original, darkened, blurred, occluded] variants of a crop.

    All four share the input's dimensions. The occlusion rectangle keeps
    the crop's aspect ratio and covers occlusion_fraction of its area.
    """
    img = _check_image(crop)
    darkened = np.clip(np.rint(img * np.float64(spec.darken_gain)), 0, 255).astype(
        np.uint8
    )
    blurred = np.asarray(
        Image.fromarray(img).filter(ImageFilter.BoxBlur(spec.blur_radius))
    )
    occluded = img.copy()
    scale = math.sqrt(spec.occlusion_fraction)
    oh = round(img.shape[0] * scale)
    ow = round(img.shape[1] * scale)
    if oh > 0 and ow > 0:
        rng = np.random.default_rng(spec.seed)
        y = int(rng.integers(0, img.shape[0] - oh + 1))
        x = int(rng.integers(0, img.shape[1] - ow + 1))
        occluded[y : y + oh, x : x + ow] = rng.integers(
            0, 256, size=(oh, ow, 3), dtype=np.uint8
        )
    return [img.copy(), darkened, blurred, occluded]


def _max_iou(box: BoundingBox, gt_boxes: Sequence[BoundingBox]) -> float:
    return max(iou(box, gt) for gt in gt_boxes)


def sample_negative_boxes(
    image_shape: tuple[int, ...],
    gt_boxes: Sequence[BoundingBox],
    iou_targets: Sequence[float],
    seed: int = 0,
    max_attempts: int = 10_000,
    tolerance: float = 0.02,
) -> list[BoundingBox]:
    """Find one ground-truth-sized box per IoU target by rejection sampling.

    A target of 0 must be met exactly (the box is disjoint from every
    ground-truth box); positive targets within +-tolerance. Raises
    ValueError when max_attempts samples cannot satisfy a target.
    """
    h, w = image_shape[:2]
    if not gt_boxes:
        raise ValueError("need at least one ground-truth box to size negatives")
    rng = np.random.default_rng(seed)
    found = []
    for target in iou_targets:
        if not 0 <= target < 1:
            raise ValueError(f"IoU target must be in [0, 1), got {target}")
        ref = gt_boxes[int(rng.integers(len(gt_boxes)))]
        bw = min(w, math.ceil(ref.w))
        bh = min(h, math.ceil(ref.h))
        if target == 0:
            lo_x, hi_x = 0, w - bw
            lo_y, hi_y = 0, h - bh
        else:
            # overlap with the reference box needs the corner nearby
            lo_x = max(0, math.floor(ref.x) - bw)
            hi_x = min(w - bw, math.ceil(ref.x2))
            lo_y = max(0, math.floor(ref.y) - bh)
            hi_y = min(h - bh, math.ceil(ref.y2))
        if lo_x > hi_x or lo_y > hi_y:
            raise ValueError(
                f"image {w}x{h} cannot host a {bw}x{bh} crop near IoU {target}"
            )
        for _ in range(max_attempts):
            x = int(rng.integers(lo_x, hi_x + 1))
            y = int(rng.integers(lo_y, hi_y + 1))
            cand = BoundingBox(float(x), float(y), float(bw), float(bh))
            measured = _max_iou(cand, gt_boxes)
            if target == 0:
                ok = measured == 0.0
            else:
                ok = abs(measured - target) <= tolerance
            if ok:
                found.append(cand)
                break
        else:
            raise ValueError(
                f"no {bw}x{bh} crop at IoU {target} found in {max_attempts} attempts"
            )
    return found


def sample_negatives(
    image: np.ndarray,
    gt_boxes: Sequence[BoundingBox],
    iou_targets: Sequence[float],
    seed: int = 0,
    max_attempts: int = 10_000,
) -> list[np.ndarray]:
    """Crop one background sample per IoU target (see sample_negative_boxes)."""
    img = _check_image(image)
    h, w = img.shape[:2]
    boxes = sample_negative_boxes(img.shape, gt_boxes, iou_targets, seed, max_attempts)
    crops = []
    for box in boxes:
        x0, y0, x1, y1 = _pixel_bounds(box, w, h)
        crops.append(img[y0:y1, x0:x1].copy())
    return crops


def double_size_crop(image: np.ndarray, gt_box: BoundingBox) -> np.ndarray:
    """Crop the box scaled x2 about its center, clipped to the image."""
    img = _check_image(image)
    h, w = img.shape[:2]
    big = BoundingBox(
        gt_box.x - gt_box.w / 2.0,
        gt_box.y - gt_box.h / 2.0,
        2.0 * gt_box.w,
        2.0 * gt_box.h,
    )
    x0, y0, x1, y1 = _pixel_bounds(big, w, h)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"box {gt_box} lies outside the {w}x{h} image")
    return img[y0:y1, x0:x1].copy()


def pad_face(
    face_crop: np.ndarray,
    background_crop: np.ndarray,
    pad_fraction: float,
    seed: int = 0,
) -> np.ndarray:
    """Composite the face onto background with a pad_fraction border per side.

    The background window is chosen by the seed; its center is overwritten
    by the face, bit for bit.
    """
    if pad_fraction < 0:
        raise ValueError(f"pad_fraction must be >= 0, got {pad_fraction}")
    face = _check_image(face_crop)
    bg = _check_image(background_crop)
    fh, fw = face.shape[:2]
    py = round(pad_fraction * fh)
    px = round(pad_fraction * fw)
    oh, ow = fh + 2 * py, fw + 2 * px
    bh, bw = bg.shape[:2]
    if bh < oh or bw < ow:
        raise ValueError(f"background {bw}x{bh} smaller than padded output {ow}x{oh}")
    rng = np.random.default_rng(seed)
    y = int(rng.integers(0, bh - oh + 1))
    x = int(rng.integers(0, bw - ow + 1))
    out = bg[y : y + oh, x : x + ow].copy()
    out[py : py + fh, px : px + fw] = face
    return out


@dataclass(frozen=True)
class ManifestRow:
    """One prepared crop: its file, class label, source image, and producing op."""

    path: str
    label: str
    source: str
    op: str


MANIFEST_FIELDS = ("path", "label", "source", "op")


def write_manifest(rows: Sequence[ManifestRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow([row.path, row.label, row.source, row.op])


def read_manifest(path: str | Path) -> list[ManifestRow]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise ValueError(f"manifest {path} has header {reader.fieldnames}")
        return [ManifestRow(**row) for row in reader]


def _safe_id(image_id: str) -> str:
    return re.sub(r"[^\w.-]+", "_", image_id)


def prepare_annotation(
    image: np.ndarray,
    annotation: Annotation,
    out_dir: str | Path,
    augment: AugmentSpec | None = None,
    iou_targets: Sequence[float] = (0.0, 0.1, 0.2),
    pad_fraction: float = 0.5,
    seed: int = 0,
) -> list[ManifestRow]:
    """Write every crop the ops produce for one annotated image.

    Files land in <out_dir>/{pos,neg}/<image_id>_<k>.png. Positives are the
    four augment variants per face; negatives are the masked image, the
    IoU-targeted backgrounds, and the double-sized and padded crops.
    """
    img = _check_image(image)
    augment = augment if augment is not None else AugmentSpec()
    out = Path(out_dir)
    (out / "pos").mkdir(parents=True, exist_ok=True)
    (out / "neg").mkdir(parents=True, exist_ok=True)
    name = _safe_id(annotation.image_id)
    h, w = img.shape[:2]
    rows: list[ManifestRow] = []
    counters = {"pos": 0, "neg": 0}

    def emit(crop: np.ndarray, label: str, op: str) -> None:
        rel = f"{label}/{name}_{counters[label]}.png"
        counters[label] += 1
        Image.fromarray(crop).save(out / rel)
        rows.append(ManifestRow(rel, label, annotation.image_id, op))

    boxes = annotation.boxes()
    masked = mask_faces(img, boxes, seed)
    emit(masked, "neg", "mask_faces")
    for i, box in enumerate(boxes):
        x0, y0, x1, y1 = _pixel_bounds(box, w, h)
        if x1 - x0 < 2 or y1 - y0 < 2:
            continue
        face = img[y0:y1, x0:x1].copy()
        variants = augment_face(face, replace(augment, seed=augment.seed + i))
        for op, crop in zip(("original", "darkened", "blurred", "occluded"), variants):
            emit(crop, "pos", op)
        emit(double_size_crop(img, box), "neg", "double_size")
        emit(pad_face(face, masked, pad_fraction, seed + i), "neg", "pad_face")
    if boxes:  # nothing to size IoU-targeted negatives from otherwise
        for target, crop in zip(
            iou_targets, sample_negatives(img, boxes, iou_targets, seed)
        ):
            emit(crop, "neg", f"iou_{target:g}")
    return rows
