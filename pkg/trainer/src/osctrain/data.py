"""Image loading and the dataset over manifest rows."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .manifest import ManifestRow
from .network import INPUT_SCALE, INPUT_SHIFT


def load_rgb(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def preprocess(image: np.ndarray, side: int) -> torch.Tensor:
    """Byte RGB of any size to a normalized (3, side, side) float tensor.

    The scale/shift arithmetic matches the exported model's first op, so a
    tensor fed here and a raw crop fed to the inference backend see the
    same numbers.
    """
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected uint8 RGB image, got {image.dtype} {image.shape}")
    if image.shape[:2] != (side, side):
        image = np.asarray(
            Image.fromarray(image).resize((side, side), Image.BILINEAR)
        )
    chw = torch.from_numpy(image.transpose(2, 0, 1).astype(np.float32))
    return chw * INPUT_SCALE + INPUT_SHIFT


class CropDataset(Dataset):
    """Lazily loads manifest rows as (normalized tensor, class index)."""

    def __init__(self, rows: list[ManifestRow], side: int):
        self.rows = rows
        self.side = side

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        row = self.rows[index]
        return preprocess(load_rgb(row.path), self.side), row.class_index


def split_rows(
    rows: list[ManifestRow], val_fraction: float, seed: int
) -> tuple[list[ManifestRow], list[ManifestRow]]:
    """Deterministic stratified split; every class lands in both halves."""
    rng = np.random.default_rng(seed)
    train: list[ManifestRow] = []
    val: list[ManifestRow] = []
    for label in sorted({r.label for r in rows}):
        group = [r for r in rows if r.label == label]
        order = rng.permutation(len(group))
        n_val = max(1, round(len(group) * val_fraction))
        if n_val >= len(group):
            raise ValueError(
                f"class {label!r} has only {len(group)} rows; "
                "not enough to hold out a validation split"
            )
        picked = [group[i] for i in order]
        val.extend(picked[:n_val])
        train.extend(picked[n_val:])
    return train, val
