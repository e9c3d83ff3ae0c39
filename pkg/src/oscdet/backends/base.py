"""Backend contract: anything that turns images into feature maps and class scores.

Backends take crops already resized to `input_side` square RGB uint8. Feature
maps are the activations of one fixed hidden layer, rectified (nonnegative).
Class scores are face probabilities in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@dataclass(frozen=True)
class BackendDescriptor:
    input_side: int
    feature_layer: str
    class_count: int = 2
    concurrency_safe: bool = True


class FeatureMaps:
    """One inference's hidden-layer activations, shaped (channels, height, width)."""

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature maps must be (C, H, W), got shape {v.shape}")
        if not np.all(v >= 0):
            raise ValueError("feature maps must be rectified (nonnegative)")
        self.values = v

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel(self, index: int) -> np.ndarray:
        if not 0 <= index < self.channels:
            raise ValueError(f"channel {index} out of range 0..{self.channels - 1}")
        return self.values[index]


def check_input(image: np.ndarray, side: int) -> np.ndarray:
    """Validate a single backend input crop and return it as contiguous uint8."""
    img = np.asarray(image)
    if img.shape != (side, side, 3):
        raise ValueError(f"backend expects {side}x{side} RGB input, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"backend expects uint8 input, got {img.dtype}")
    return np.ascontiguousarray(img)


@runtime_checkable
class InferenceBackend(Protocol):
    descriptor: BackendDescriptor

    def infer_features(self, image: np.ndarray) -> FeatureMaps:
        """Feature maps of the configured hidden layer for one input crop."""
        ...

    def infer_class_scores(self, images: Sequence[np.ndarray]) -> list[float]:
        """Face probability per crop; order matches the input order."""
        ...
