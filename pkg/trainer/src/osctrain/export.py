"""Model export: serialize the network to a tensor-graph archive and verify it.

The file format is a numpy ``.npz``: named float32 weight arrays plus a
``graph.json`` entry (UTF-8 JSON stored as a uint8 array) listing ops in
execution order. The verification pass reloads the archive with numpy
alone and walks the graph doing shape inference, so a wiring mistake is
caught by arithmetic independent of the training framework.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .network import LRN_ALPHA, LRN_BETA, LRN_K, LRN_SIZE, INPUT_SCALE, INPUT_SHIFT, FaceNet

FORMAT_NAME = "tensor-graph/1"
GRAPH_KEY = "graph.json"


class ExportError(RuntimeError):
    pass


def build_graph(net: FaceNet, feature_layer: str) -> tuple[dict, dict[str, np.ndarray]]:
    """(graph dict, weight arrays) for the archive; no file I/O."""
    names = net.stage_names()
    if feature_layer not in names or feature_layer.startswith("drop"):
        raise ExportError(
            f"network has no layer named {feature_layer!r}; "
            f"choose from {', '.join(n for n in names if not n.startswith('drop'))}"
        )

    def arr(tensor) -> np.ndarray:
        return tensor.detach().cpu().numpy().astype(np.float32)

    weights: dict[str, np.ndarray] = {
        "pre.scale": np.full(3, INPUT_SCALE, dtype=np.float32),
        "pre.shift": np.full(3, INPUT_SHIFT, dtype=np.float32),
    }
    ops: list[dict] = [
        {"op": "scale_shift", "name": "x0", "input": "input",
         "scale": "pre.scale", "shift": "pre.shift"},
    ]
    last = "x0"

    def emit(op: dict) -> None:
        nonlocal last
        ops.append({**op, "input": last})
        last = op["name"]

    conv_pads = {"conv1": 0, "conv2": 2, "conv3": 1, "conv4": 1, "conv5": 1}
    for name, stage in net.stages():
        if name.startswith("drop"):
            continue  # identity at inference
        if name.startswith("conv"):
            weights[f"{name}.w"] = arr(stage.weight)
            weights[f"{name}.b"] = arr(stage.bias)
            emit({"op": "conv2d", "name": name, "weight": f"{name}.w",
                  "bias": f"{name}.b", "stride": stage.stride[0],
                  "pad": conv_pads[name]})
        elif name.startswith("relu"):
            emit({"op": "relu", "name": name})
        elif name.startswith("lrn"):
            emit({"op": "lrn", "name": name, "size": LRN_SIZE,
                  "alpha": LRN_ALPHA, "beta": LRN_BETA, "k": LRN_K})
        elif name.startswith("pool"):
            emit({"op": "maxpool", "name": name, "kernel": 3, "stride": 2})
        elif name == "flat":
            emit({"op": "flatten", "name": name})
        elif name.startswith("fc"):
            weights[f"{name}.w"] = arr(stage.weight)
            weights[f"{name}.b"] = arr(stage.bias)
            emit({"op": "linear", "name": name, "weight": f"{name}.w",
                  "bias": f"{name}.b"})
        elif name == "prob":
            emit({"op": "softmax", "name": name})
        else:
            raise ExportError(f"stage {name!r} has no export rule")

    graph = {
        "format": FORMAT_NAME,
        "input": {"name": "input", "shape": [3, net.input_side, net.input_side]},
        "tensors": {"feature": feature_layer, "probability": "prob"},
        "ops": ops,
    }
    return graph, weights


def _infer_shapes(graph: Mapping, weights: Mapping[str, np.ndarray]) -> dict[str, tuple]:
    """Walk the op list computing every tensor's shape from first principles."""
    name = graph["input"]["name"]
    shapes = {name: tuple(int(v) for v in graph["input"]["shape"])}
    for op in graph["ops"]:
        x = shapes.get(op["input"])
        if x is None:
            raise ExportError(f"op {op['name']!r} reads undefined tensor {op['input']!r}")
        for key in ("weight", "bias", "scale", "shift"):
            if key in op and op[key] not in weights:
                raise ExportError(f"op {op['name']!r} references missing array {op[key]!r}")
        kind = op["op"]
        if kind == "scale_shift":
            if weights[op["scale"]].shape != (x[0],):
                raise ExportError(
                    f"scale array {op['scale']!r} has shape "
                    f"{weights[op['scale']].shape}, input has {x[0]} channels"
                )
            y = x
        elif kind == "conv2d":
            w = weights[op["weight"]]
            if w.ndim != 4 or w.shape[1] != x[0]:
                raise ExportError(
                    f"conv {op['name']!r} weight shape {w.shape} does not "
                    f"accept {x[0]} input channels"
                )
            k, s, p = w.shape[2], int(op.get("stride", 1)), int(op.get("pad", 0))
            y = (w.shape[0], (x[1] + 2 * p - k) // s + 1, (x[2] + 2 * p - k) // s + 1)
        elif kind in ("relu", "lrn", "softmax"):
            y = x
        elif kind == "maxpool":
            k, s = int(op["kernel"]), int(op["stride"])
            y = (x[0], (x[1] - k) // s + 1, (x[2] - k) // s + 1)
        elif kind == "flatten":
            y = (int(math.prod(x)),)
        elif kind == "linear":
            w = weights[op["weight"]]
            if w.ndim != 2 or w.shape[1] != x[-1]:
                raise ExportError(
                    f"linear {op['name']!r} weight shape {w.shape} does not "
                    f"accept {x[-1]} features"
                )
            y = (w.shape[0],)
        else:
            raise ExportError(f"unknown op {kind!r} in graph")
        shapes[op["name"]] = y
    return shapes


def verify_model_file(
    path: str | Path, feature_shape: tuple[int, ...], class_count: int
) -> None:
    """Reload the archive and check names and inferred shapes; raise on any lie."""
    with np.load(path) as data:
        if GRAPH_KEY not in data:
            raise ExportError(f"exported file {path} has no {GRAPH_KEY} entry")
        graph = json.loads(bytes(data[GRAPH_KEY]).decode("utf-8"))
        weights = {k: data[k] for k in data.files if k != GRAPH_KEY}
    if graph.get("format") != FORMAT_NAME:
        raise ExportError(f"exported file declares format {graph.get('format')!r}")
    for array in weights.values():
        if array.dtype != np.float32:
            raise ExportError("exported weights must be float32")
    shapes = _infer_shapes(graph, weights)
    for role in ("feature", "probability"):
        tensor = graph.get("tensors", {}).get(role)
        if tensor not in shapes:
            raise ExportError(f"graph nominates unknown {role} tensor {tensor!r}")
    got = shapes[graph["tensors"]["feature"]]
    if got != tuple(feature_shape):
        raise ExportError(
            f"feature tensor shape {got} does not match the network's {tuple(feature_shape)}"
        )
    if shapes[graph["tensors"]["probability"]] != (class_count,):
        raise ExportError(
            f"probability tensor shape {shapes[graph['tensors']['probability']]} "
            f"is not ({class_count},)"
        )


def export_model(net: FaceNet, path: str | Path, feature_layer: str = "relu5") -> Path:
    """Write the archive, then verify it; a failed verification aborts.

    The verification compares shapes inferred from the written file against
    the live network's own activation shapes, so the two routes share
    nothing but the answer.
    """
    graph, weights = build_graph(net, feature_layer)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoded = np.frombuffer(json.dumps(graph).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **{GRAPH_KEY: encoded}, **weights)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        dummy = torch.zeros(1, 3, net.input_side, net.input_side)
        expected = tuple(net.activations(dummy, [feature_layer])[feature_layer].shape[1:])
    net.train(was_training)
    verify_model_file(path, expected, net.class_count)
    return path
