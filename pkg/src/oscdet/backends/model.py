"""Model-file backend: runs a small serialized convnet with numpy.

The file is a numpy ``.npz`` archive holding named weight arrays plus a
``graph.json`` entry (UTF-8 JSON as a uint8 array) that describes the
network:

    {
      "format": "tensor-graph/1",
      "input": {"name": "input", "shape": [3, 227, 227]},
      "tensors": {"feature": "relu5", "probability": "prob"},
      "ops": [
        {"op": "scale_shift", "name": "x0", "input": "input",
         "scale": "pre.scale", "shift": "pre.shift"},
        {"op": "conv2d", "name": "conv1", "input": "x0",
         "weight": "conv1.w", "bias": "conv1.b", "stride": 4, "pad": 0},
        {"op": "relu", "name": "relu1", "input": "conv1"},
        {"op": "lrn", "name": "lrn1", "input": "relu1",
         "size": 5, "alpha": 1e-4, "beta": 0.75, "k": 1.0},
        {"op": "maxpool", "name": "pool1", "input": "lrn1",
         "kernel": 3, "stride": 2},
        {"op": "flatten", "name": "flat", "input": "pool1"},
        {"op": "linear", "name": "fc", "input": "flat",
         "weight": "fc.w", "bias": "fc.b"},
        {"op": "softmax", "name": "prob", "input": "fc"}
      ]
    }

Ops run in file order; every input must name the graph input or an earlier
op. ``tensors`` nominates default feature and probability outputs, which
the constructor can override. Weight references point at arrays stored in
the same archive. Activations flow as float32 with batch-first shapes
(N, C, H, W), flattened C-major.

Conventions chosen to match common training frameworks: lrn divides alpha
by the window size and clips the channel window at the edges; maxpool uses
no padding and drops partial windows; linear weights are (out, in).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .base import BackendDescriptor, FeatureMaps, check_input

FORMAT_NAME = "tensor-graph/1"
GRAPH_KEY = "graph.json"
_OPS = ("scale_shift", "conv2d", "relu", "lrn", "maxpool", "flatten", "linear", "softmax")


def _pool_view(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, C, oh, ow, kernel, kernel) sliding windows; partial windows dropped."""
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ValueError(f"kernel {kernel} larger than input {h}x{w}")
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        (n, c, oh, ow, kernel, kernel),
        (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _conv2d(x, weight, bias, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    view = _pool_view(x, weight.shape[2], stride)
    if weight.shape[3] != weight.shape[2]:
        raise ValueError(f"only square kernels supported, got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ValueError(
            f"conv weight expects {weight.shape[1]} channels, input has {x.shape[1]}"
        )
    out = np.tensordot(view, weight, axes=([1, 4, 5], [1, 2, 3]))
    return (out + bias).transpose(0, 3, 1, 2)


def _lrn(x, size, alpha, beta, k):
    if size < 1 or size % 2 == 0:
        raise ValueError(f"lrn size must be odd and positive, got {size}")
    half = size // 2
    padded = np.pad(x * x, ((0, 0), (half, half), (0, 0), (0, 0)))
    sums = sliding_window_view(padded, size, axis=1).sum(axis=-1)
    return x / (k + (alpha / size) * sums) ** beta


def _maxpool(x, kernel, stride):
    return _pool_view(x, kernel, stride).max(axis=(4, 5))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class TensorGraph:
    """Parsed, validated graph plus its weights; runs feeds to named outputs."""

    def __init__(self, graph: Mapping, weights: Mapping[str, np.ndarray]):
        if graph.get("format") != FORMAT_NAME:
            raise ValueError(f"unsupported model format {graph.get('format')!r}")
        self.input_name = graph["input"]["name"]
        self.input_shape = tuple(int(v) for v in graph["input"]["shape"])
        if len(self.input_shape) != 3 or self.input_shape[0] != 3:
            raise ValueError(f"input shape must be (3, H, W), got {self.input_shape}")
        if self.input_shape[1] != self.input_shape[2]:
            raise ValueError(f"input must be square, got {self.input_shape}")
        self.tensors = dict(graph.get("tensors", {}))
        self.ops = [dict(op) for op in graph["ops"]]
        self.weights = {}
        defined = {self.input_name}
        for op in self.ops:
            kind, name = op.get("op"), op.get("name")
            if kind not in _OPS:
                raise ValueError(f"unknown op {kind!r} at tensor {name!r}")
            if not name or name in defined:
                raise ValueError(f"op output name {name!r} missing or duplicated")
            if op.get("input") not in defined:
                raise ValueError(
                    f"op {name!r} reads undefined tensor {op.get('input')!r}"
                )
            for key in ("weight", "bias", "scale", "shift"):
                if key in op:
                    ref = op[key]
                    if ref not in weights:
                        raise ValueError(
                            f"op {name!r} references missing array {ref!r}"
                        )
                    self.weights[ref] = np.asarray(weights[ref], dtype=np.float32)
            defined.add(name)
        self.defined = defined

    def run(self, feed: np.ndarray, wanted: Sequence[str]) -> dict[str, np.ndarray]:
        """Execute ops in order until every wanted tensor is computed."""
        missing = [name for name in wanted if name not in self.defined]
        if missing:
            raise ValueError(f"model has no tensor named {missing[0]!r}")
        values = {self.input_name: np.asarray(feed, dtype=np.float32)}
        remaining = set(wanted) - set(values)
        for op in self.ops:
            if not remaining:
                break
            x = values[op["input"]]
            kind = op["op"]
            if kind == "scale_shift":
                scale = self.weights[op["scale"]][:, None, None]
                shift = self.weights[op["shift"]][:, None, None]
                y = x * scale + shift
            elif kind == "conv2d":
                y = _conv2d(
                    x,
                    self.weights[op["weight"]],
                    self.weights[op["bias"]],
                    int(op.get("stride", 1)),
                    int(op.get("pad", 0)),
                )
            elif kind == "relu":
                y = np.maximum(x, 0.0)
            elif kind == "lrn":
                y = _lrn(
                    x,
                    int(op["size"]),
                    float(op["alpha"]),
                    float(op["beta"]),
                    float(op["k"]),
                )
            elif kind == "maxpool":
                y = _maxpool(x, int(op["kernel"]), int(op["stride"]))
            elif kind == "flatten":
                y = x.reshape(x.shape[0], -1)
            elif kind == "linear":
                y = x @ self.weights[op["weight"]].T + self.weights[op["bias"]]
            else:
                y = _softmax(x)
            values[op["name"]] = y.astype(np.float32, copy=False)
            remaining.discard(op["name"])
        if remaining:
            raise ValueError(f"tensor {sorted(remaining)[0]!r} was never computed")
        return values


def load_graph(path: str | Path) -> TensorGraph:
    with np.load(path) as data:
        if GRAPH_KEY not in data:
            raise ValueError(f"model file {path} has no {GRAPH_KEY} entry")
        graph = json.loads(bytes(data[GRAPH_KEY]).decode("utf-8"))
        weights = {k: data[k] for k in data.files if k != GRAPH_KEY}
    return TensorGraph(graph, weights)


class ModelBackend:
    """Backend over a tensor-graph model file.

    feature_tensor and probability_tensor override the file's nominated
    outputs; face_index picks the face column of the probability tensor.
    """

    def __init__(
        self,
        path: str | Path,
        feature_tensor: str | None = None,
        probability_tensor: str | None = None,
        face_index: int = 1,
        batch_size: int = 16,
    ):
        self.graph = load_graph(path)
        self.feature_tensor = feature_tensor or self.graph.tensors.get("feature")
        self.probability_tensor = probability_tensor or self.graph.tensors.get(
            "probability"
        )
        if not self.feature_tensor or not self.probability_tensor:
            raise ValueError(
                "model file nominates no feature/probability tensors; "
                "pass feature_tensor and probability_tensor explicitly"
            )
        for name in (self.feature_tensor, self.probability_tensor):
            if name not in self.graph.defined:
                raise ValueError(f"model has no tensor named {name!r}")
        if not 0 <= face_index < 2:
            raise ValueError(f"face_index must be 0 or 1, got {face_index}")
        self.face_index = face_index
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.batch_size = batch_size
        self.descriptor = BackendDescriptor(
            input_side=self.graph.input_shape[1],
            feature_layer=self.feature_tensor,
            class_count=2,
            concurrency_safe=True,
        )

    def _feed(self, image: np.ndarray) -> np.ndarray:
        img = check_input(image, self.descriptor.input_side)
        return img.transpose(2, 0, 1).astype(np.float32)

    def infer_features(self, image: np.ndarray) -> FeatureMaps:
        feed = self._feed(image)[np.newaxis]
        out = self.graph.run(feed, [self.feature_tensor])
        return FeatureMaps(out[self.feature_tensor][0])

    def infer_class_scores(self, images: Sequence[np.ndarray]) -> list[float]:
        if not images:
            return []
        feeds = []
        for i, image in enumerate(images):
            try:
                feeds.append(self._feed(image))
            except ValueError as e:
                raise ValueError(f"batch item {i}: {e}") from e
        scores: list[float] = []
        for start in range(0, len(feeds), self.batch_size):
            batch = np.stack(feeds[start : start + self.batch_size])
            probs = self.graph.run(batch, [self.probability_tensor])[
                self.probability_tensor
            ]
            if probs.ndim != 2 or probs.shape[1] <= self.face_index:
                raise ValueError(
                    f"probability tensor has shape {probs.shape}, "
                    f"cannot take face column {self.face_index}"
                )
            scores.extend(float(p) for p in probs[:, self.face_index])
        return scores
