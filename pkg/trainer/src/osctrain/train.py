"""Fine-tuning driver: manifest in, model file and JSON report out."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from .data import CropDataset, split_rows
from .export import export_model
from .manifest import LABELS, class_counts, read_manifest
from .network import FaceNet, build_network


@dataclass(frozen=True)
class TrainConfig:
    manifest: str
    export_path: str
    report_path: str | None = None
    pretrained: str = "random:0"
    class_count: int = 2
    learning_rate: float = 3e-4
    epochs: int = 2
    batch_size: int = 16
    seed: int = 0
    val_fraction: float = 0.2
    feature_layer: str = "relu5"
    input_side: int = 227

    def __post_init__(self) -> None:
        if self.class_count != 2:
            raise ValueError(
                f"this is a two-class model, got class_count {self.class_count}"
            )
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class FinetuneResult:
    network: FaceNet = field(repr=False)
    report: dict
    model_path: Path
    report_path: Path


def _accuracy(net: FaceNet, loader: DataLoader) -> float:
    net.eval()
    hits = total = 0
    with torch.no_grad():
        for batch, labels in loader:
            hits += int((net(batch).argmax(dim=1) == labels).sum())
            total += len(labels)
    return hits / total


def finetune(cfg: TrainConfig) -> FinetuneResult:
    """Train per the config, export the model, write the report, return both.

    Fixed seeds make the run reproducible: the same config yields the same
    loss curve and the same exported weights.
    """
    manifest = Path(cfg.manifest)
    if not manifest.exists():
        raise ValueError(f"manifest {manifest} not found")
    rows = read_manifest(manifest)
    counts = class_counts(rows)
    for label in LABELS:
        if counts[label] == 0:
            raise ValueError(f"manifest has no {label!r} rows; need both classes")
    train_rows, val_rows = split_rows(rows, cfg.val_fraction, cfg.seed)

    torch.manual_seed(cfg.seed)
    net = build_network(cfg.pretrained, cfg.class_count, cfg.input_side)
    loader = DataLoader(
        CropDataset(train_rows, cfg.input_side),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
    )
    eval_train = DataLoader(CropDataset(train_rows, cfg.input_side), batch_size=cfg.batch_size)
    eval_val = DataLoader(CropDataset(val_rows, cfg.input_side), batch_size=cfg.batch_size)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss()

    loss_curve: list[float] = []
    epoch_stats: list[dict] = []
    for epoch in range(cfg.epochs):
        net.train()
        epoch_losses = []
        for batch, labels in loader:
            optimizer.zero_grad()
            loss = loss_fn(net(batch), labels)
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
        loss_curve.extend(epoch_losses)
        epoch_stats.append(
            {
                "epoch": epoch,
                "mean_loss": float(np.mean(epoch_losses)),
                "val_accuracy": _accuracy(net, eval_val),
            }
        )

    final = {
        "train_accuracy": _accuracy(net, eval_train),
        "val_accuracy": _accuracy(net, eval_val),
    }
    model_path = export_model(net, cfg.export_path, cfg.feature_layer)

    report = {
        "config": {k: getattr(cfg, k) for k in TrainConfig.__dataclass_fields__},
        "classes": {label: i for i, label in enumerate(LABELS)},
        "dataset": {
            "rows": len(rows),
            "train": len(train_rows),
            "val": len(val_rows),
            **counts,
        },
        "optimizer": {"name": "adam", "learning_rate": cfg.learning_rate,
                      "betas": [0.9, 0.999]},
        "loss_curve": loss_curve,
        "epochs": epoch_stats,
        "final": final,
        "model_path": str(model_path),
    }
    report_path = (
        Path(cfg.report_path)
        if cfg.report_path
        else model_path.with_suffix(".report.json")
    )
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return FinetuneResult(net, report, model_path, report_path)
