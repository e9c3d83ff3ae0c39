"""The eight-layer convolutional classifier and its pretrained-weight loading.

Topology is the classic five-conv/three-fc network (no channel groups):
11x11/4 stem, two local-response-normalized and pooled stages, three 3x3
stages, then 4096-4096-C fully connected. At the default 227 input the
conv5 activation grid is 256x13x13, which is the feature layer the
detector taps.

Inputs are raw RGB bytes scaled per channel by INPUT_SCALE and INPUT_SHIFT
(to [-1, 1]); the exported model file carries the same constants as its
first op, so the inference side feeds plain 0..255 crops.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator, Sequence

import torch
from torch import nn
from torch.nn import functional as F

INPUT_SCALE = 1.0 / 127.5
INPUT_SHIFT = -1.0

LRN_SIZE = 5
LRN_ALPHA = 1e-4
LRN_BETA = 0.75
LRN_K = 2.0

# smallest input whose conv5 grid still pools to at least 1x1
MIN_INPUT_SIDE = 67


def conv_grid_sides(input_side: int) -> tuple[int, int, int]:
    """(post-pool1, conv5, post-pool5) spatial sides for a square input."""
    s1 = (input_side - 11) // 4 + 1
    p1 = (s1 - 3) // 2 + 1
    p2 = (p1 - 3) // 2 + 1
    p5 = (p2 - 3) // 2 + 1
    return p1, p2, p5


class FaceNet(nn.Module):
    """Five conv stages, three fc stages, softmax head; stages are named."""

    def __init__(self, class_count: int = 2, input_side: int = 227):
        super().__init__()
        if input_side < MIN_INPUT_SIDE:
            raise ValueError(
                f"input side must be >= {MIN_INPUT_SIDE}, got {input_side}"
            )
        if class_count < 2:
            raise ValueError(f"class count must be >= 2, got {class_count}")
        self.class_count = class_count
        self.input_side = input_side
        _, p2, p5 = conv_grid_sides(input_side)
        self.feature_grid = p2
        self.conv1 = nn.Conv2d(3, 96, 11, stride=4)
        self.conv2 = nn.Conv2d(96, 256, 5, padding=2)
        self.conv3 = nn.Conv2d(256, 384, 3, padding=1)
        self.conv4 = nn.Conv2d(384, 384, 3, padding=1)
        self.conv5 = nn.Conv2d(384, 256, 3, padding=1)
        self.lrn = nn.LocalResponseNorm(LRN_SIZE, LRN_ALPHA, LRN_BETA, LRN_K)
        self.pool = nn.MaxPool2d(3, stride=2)
        self.fc6 = nn.Linear(256 * p5 * p5, 4096)
        self.fc7 = nn.Linear(4096, 4096)
        self.fc8 = nn.Linear(4096, class_count)
        self.drop = nn.Dropout(0.5)

    def stages(self) -> Iterator[tuple[str, object]]:
        """(name, callable) pairs in forward order; names match the export."""
        yield "conv1", self.conv1
        yield "relu1", F.relu
        yield "lrn1", self.lrn
        yield "pool1", self.pool
        yield "conv2", self.conv2
        yield "relu2", F.relu
        yield "lrn2", self.lrn
        yield "pool2", self.pool
        yield "conv3", self.conv3
        yield "relu3", F.relu
        yield "conv4", self.conv4
        yield "relu4", F.relu
        yield "conv5", self.conv5
        yield "relu5", F.relu
        yield "pool5", self.pool
        yield "flat", lambda x: torch.flatten(x, 1)
        yield "fc6", self.fc6
        yield "relu6", F.relu
        yield "drop6", self.drop
        yield "fc7", self.fc7
        yield "relu7", F.relu
        yield "drop7", self.drop
        yield "fc8", self.fc8
        yield "prob", lambda x: F.softmax(x, dim=1)

    def stage_names(self) -> list[str]:
        return [name for name, _ in self.stages()]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits (softmax left to the loss or the exported graph)."""
        for name, fn in self.stages():
            if name == "prob":
                break
            x = fn(x)
        return x

    def activations(self, x: torch.Tensor, wanted: Sequence[str]) -> dict[str, torch.Tensor]:
        """Named stage outputs for probe comparisons; run under no_grad."""
        missing = [name for name in wanted if name not in self.stage_names()]
        if missing:
            raise ValueError(f"network has no layer named {missing[0]!r}")
        remaining = set(wanted)
        out: dict[str, torch.Tensor] = {}
        for name, fn in self.stages():
            x = fn(x)
            if name in remaining:
                out[name] = x
                remaining.discard(name)
                if not remaining:
                    break
        return out


def _parse_random(identifier: str) -> int | None:
    if identifier == "random":
        return 0
    if identifier.startswith("random:"):
        tail = identifier.split(":", 1)[1]
        try:
            return int(tail)
        except ValueError:
            raise ValueError(f"bad random seed in pretrained id {identifier!r}") from None
    return None


def build_network(
    pretrained: str, class_count: int = 2, input_side: int = 227
) -> FaceNet:
    """Network from a pretrained identifier: "random[:seed]" or a weights path.

    A weights file is a torch state dict; a head whose shape disagrees with
    `class_count` is replaced by a fresh one (the fine-tuning case), any
    other mismatch is an error.
    """
    seed = _parse_random(pretrained)
    torch.manual_seed(seed if seed is not None else 0)
    net = FaceNet(class_count, input_side)
    if seed is not None:
        return net
    path = Path(pretrained)
    if not path.exists():
        raise ValueError(f"pretrained weights file {path} not found")
    state = torch.load(path, map_location="cpu", weights_only=True)
    own = net.state_dict()
    if set(state) != set(own):
        odd = sorted(set(state) ^ set(own))
        raise ValueError(f"pretrained state dict key mismatch: {odd[:4]}")
    filtered = {}
    for key, value in state.items():
        if value.shape != own[key].shape:
            if key.startswith("fc8."):
                continue  # reshaped head: keep the freshly initialized one
            raise ValueError(
                f"pretrained tensor {key} has shape {tuple(value.shape)}, "
                f"expected {tuple(own[key].shape)}"
            )
        filtered[key] = value
    net.load_state_dict(filtered, strict=False)
    return net
