"""Training side of the face-detection toolkit.

Consumes the crop manifest written by `oscdet prepare-data`, fine-tunes a
classic eight-layer convolutional classifier into a two-class face network,
and exports a tensor-graph model file the inference package loads directly.
"""

from .export import ExportError, export_model, verify_model_file
from .manifest import LABELS, ManifestRow, read_manifest
from .network import FaceNet, build_network
from .train import FinetuneResult, TrainConfig, finetune

__all__ = [
    "ExportError",
    "FaceNet",
    "FinetuneResult",
    "LABELS",
    "ManifestRow",
    "TrainConfig",
    "build_network",
    "export_model",
    "finetune",
    "read_manifest",
    "verify_model_file",
]
