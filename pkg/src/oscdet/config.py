"""Run configuration: JSON file schema, validation, backend construction.

A config names exactly one backend (synthetic or a model file), the
detection settings, and optional dataset paths. Dicts round-trip through
config_from_dict/config_to_dict so a run can write its resolved config and
be reproduced from it. Unknown keys are rejected rather than ignored, so
typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .backends.model import ModelBackend
from .backends.synthetic import SyntheticBackend
from .detector import DetectConfig
from .proposals import ProposalConfig


class ConfigError(ValueError):
    """Invalid or contradictory run configuration."""


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    planted_channel: int = 57


@dataclass(frozen=True)
class ModelSpec:
    path: str
    feature_tensor: str | None = None
    probability_tensor: str | None = None
    face_index: int = 1


@dataclass(frozen=True)
class RunConfig:
    backend: SyntheticSpec | ModelSpec
    detect: DetectConfig
    images_dir: str | None = None
    annotations: str | None = None
    out_dir: str = "out"
    seed: int = 0


def _take(mapping: dict, context: str, allowed: set[str]) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")


def _sides(value, context: str) -> tuple[int, ...] | None:
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
        raise ConfigError(f"{context} must be null or a list of integers")
    return tuple(value)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    _take(data, "config", {"backend", "detect", "images_dir", "annotations",
                           "out_dir", "seed"})
    backend_section = data.get("backend", {"synthetic": {}})
    if not isinstance(backend_section, dict) or len(backend_section) != 1:
        raise ConfigError("backend must select exactly one of: synthetic, model")
    (kind, spec), = backend_section.items()
    if not isinstance(spec, dict):
        raise ConfigError(f"backend.{kind} must be an object")
    if kind == "synthetic":
        _take(spec, "backend.synthetic", {"seed", "planted_channel"})
        backend = SyntheticSpec(
            seed=int(spec.get("seed", 0)),
            planted_channel=int(spec.get("planted_channel", 57)),
        )
        default_channel = backend.planted_channel
    elif kind == "model":
        _take(spec, "backend.model",
              {"path", "feature_tensor", "probability_tensor", "face_index"})
        if "path" not in spec:
            raise ConfigError("backend.model needs a path")
        backend = ModelSpec(
            path=str(spec["path"]),
            feature_tensor=spec.get("feature_tensor"),
            probability_tensor=spec.get("probability_tensor"),
            face_index=int(spec.get("face_index", 1)),
        )
        default_channel = None
    else:
        raise ConfigError(f"unknown backend kind {kind!r}")

    detect_section = data.get("detect", {})
    if not isinstance(detect_section, dict):
        raise ConfigError("detect must be an object")
    _take(detect_section, "detect",
          {"osc_channel", "nms_iou", "accept_score", "window_sides",
           "tile_stride_ratio", "proposal"})
    proposal_section = detect_section.get("proposal", {})
    if not isinstance(proposal_section, dict):
        raise ConfigError("detect.proposal must be an object")
    _take(proposal_section, "detect.proposal",
          {"threshold", "window_sides", "stride_ratio", "max_proposals",
           "ladder_min", "ladder_ratio"})
    osc_channel = detect_section.get("osc_channel", default_channel)
    if osc_channel is None:
        raise ConfigError("detect.osc_channel is required for a model backend")
    defaults = ProposalConfig()
    try:
        proposal = ProposalConfig(
            threshold=float(proposal_section.get("threshold", defaults.threshold)),
            window_sides=_sides(
                proposal_section.get("window_sides"), "detect.proposal.window_sides"
            ),
            stride_ratio=float(
                proposal_section.get("stride_ratio", defaults.stride_ratio)
            ),
            max_proposals=int(
                proposal_section.get("max_proposals", defaults.max_proposals)
            ),
            ladder_min=int(proposal_section.get("ladder_min", defaults.ladder_min)),
            ladder_ratio=float(
                proposal_section.get("ladder_ratio", defaults.ladder_ratio)
            ),
        )
        detect = DetectConfig(
            osc_channel=int(osc_channel),
            proposal=proposal,
            nms_iou=float(detect_section.get("nms_iou", 0.3)),
            accept_score=float(detect_section.get("accept_score", 0.5)),
            window_sides=_sides(
                detect_section.get("window_sides"), "detect.window_sides"
            ),
            tile_stride_ratio=float(detect_section.get("tile_stride_ratio", 0.5)),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e

    def opt_str(key):
        value = data.get(key)
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string path")
        return value

    return RunConfig(
        backend=backend,
        detect=detect,
        images_dir=opt_str("images_dir"),
        annotations=opt_str("annotations"),
        out_dir=str(data.get("out_dir", "out")),
        seed=int(data.get("seed", 0)),
    )


def config_to_dict(cfg: RunConfig) -> dict:
    if isinstance(cfg.backend, SyntheticSpec):
        backend = {"synthetic": {"seed": cfg.backend.seed,
                                 "planted_channel": cfg.backend.planted_channel}}
    else:
        backend = {"model": {
            "path": cfg.backend.path,
            "feature_tensor": cfg.backend.feature_tensor,
            "probability_tensor": cfg.backend.probability_tensor,
            "face_index": cfg.backend.face_index,
        }}
    p = cfg.detect.proposal
    return {
        "backend": backend,
        "detect": {
            "osc_channel": cfg.detect.osc_channel,
            "nms_iou": cfg.detect.nms_iou,
            "accept_score": cfg.detect.accept_score,
            "window_sides": (
                None if cfg.detect.window_sides is None
                else list(cfg.detect.window_sides)
            ),
            "tile_stride_ratio": cfg.detect.tile_stride_ratio,
            "proposal": {
                "threshold": p.threshold,
                "window_sides": (
                    None if p.window_sides is None else list(p.window_sides)
                ),
                "stride_ratio": p.stride_ratio,
                "max_proposals": p.max_proposals,
                "ladder_min": p.ladder_min,
                "ladder_ratio": p.ladder_ratio,
            },
        },
        "images_dir": cfg.images_dir,
        "annotations": cfg.annotations,
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
    }


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def make_backend(cfg: RunConfig):
    """Construct the configured inference backend, checking referenced paths."""
    if isinstance(cfg.backend, SyntheticSpec):
        return SyntheticBackend(
            seed=cfg.backend.seed, planted_channel=cfg.backend.planted_channel
        )
    if not Path(cfg.backend.path).is_file():
        raise ConfigError(f"model file not found: {cfg.backend.path}")
    try:
        return ModelBackend(
            cfg.backend.path,
            feature_tensor=cfg.backend.feature_tensor,
            probability_tensor=cfg.backend.probability_tensor,
            face_index=cfg.backend.face_index,
        )
    except ValueError as e:
        raise ConfigError(f"model file {cfg.backend.path}: {e}") from e
