"""Command-line entry point: prepare-data, rank-channels, detect, evaluate.

Every command resolves a RunConfig (file plus flag overrides), echoes it
into the output directory, and writes deterministic artifacts there. Exit
codes: 0 success, 1 partial or total failure, 2 invalid config or usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .channels import rank_channels
from .config import ConfigError, RunConfig, config_from_dict, load_config, make_backend, save_config
from .dataprep import prepare_annotation, write_manifest
from .detector import classify_proposals, nms, response_heatmap
from .evaluation import (
    detection_to_ellipse,
    pascal_ap,
    pascal_pr,
    roc_curve,
    write_curve_csv,
)
from .formats import (
    read_annotations_jsonl,
    read_detections_fddb,
    read_detections_jsonl,
    read_fddb_ellipses,
    read_fold_file,
    write_detections_fddb,
    write_detections_jsonl,
)
from .geometry import region_box
from .proposals import scan_proposals
from .reports import (
    plot_channel_scores,
    plot_pr_curve,
    plot_roc_curves,
    save_heatmap_png,
    write_channel_csv,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def find_image(images_dir: Path, image_id: str) -> Path:
    base = images_dir / image_id
    if base.is_file():
        return base
    for suffix in IMAGE_SUFFIXES:
        candidate = Path(str(base) + suffix)
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no image for id {image_id!r} under {images_dir}")


def image_id_for(path: Path, images_dir: Path | None) -> str:
    """Relative-to-dataset path without extension, or the bare stem."""
    if images_dir is not None:
        try:
            rel = path.resolve().relative_to(images_dir.resolve())
            return rel.with_suffix("").as_posix()
        except ValueError:
            pass
    return path.stem


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    if getattr(args, "images_dir", None) is not None:
        cfg = replace(cfg, images_dir=str(args.images_dir))
    if getattr(args, "annotations", None) is not None:
        cfg = replace(cfg, annotations=str(args.annotations))
    if getattr(args, "osc_channel", None) is not None:
        cfg = replace(cfg, detect=replace(cfg.detect, osc_channel=args.osc_channel))
    return cfg


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    return out


def _require(cfg: RunConfig, field: str) -> str:
    value = getattr(cfg, field)
    if value is None:
        raise ConfigError(f"{field.replace('_', '-')} is required (flag or config)")
    return value


def _load_annotation_boxes(path: str) -> dict[str, list]:
    """Ground-truth regions by image id; JSONL boxes or FDDB ellipses."""
    if path.endswith(".jsonl"):
        return {a.image_id: list(a.regions) for a in read_annotations_jsonl(path)}
    return {k: list(v) for k, v in read_fddb_ellipses(path).items()}


def cmd_prepare_data(args: argparse.Namespace, cfg: RunConfig) -> int:
    annotations = read_annotations_jsonl(_require(cfg, "annotations"))
    images_dir = Path(_require(cfg, "images_dir"))
    out = _prepare_out(cfg)
    failures = 0
    results: list[list] = [[] for _ in annotations]

    def work(item):
        index, ann = item
        image = load_rgb(find_image(images_dir, ann.image_id))
        return index, prepare_annotation(
            image, ann, out, pad_fraction=args.pad_fraction, seed=cfg.seed + index
        )

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        for future in [pool.submit(work, item) for item in enumerate(annotations)]:
            try:
                index, rows = future.result()
                results[index] = rows
            except Exception as e:
                failures += 1
                _fail(f"prepare-data: {e}")
    rows = [row for per_image in results for row in per_image]
    write_manifest(rows, out / "manifest.csv")
    print(f"wrote {len(rows)} crops for {len(annotations) - failures} images "
          f"to {out}")
    return 1 if failures else 0


def cmd_rank_channels(args: argparse.Namespace, cfg: RunConfig) -> int:
    backend = make_backend(cfg)
    annotations = read_annotations_jsonl(_require(cfg, "annotations"))
    images_dir = Path(_require(cfg, "images_dir"))
    usable = [a for a in annotations if a.regions]
    skipped = len(annotations) - len(usable)
    if skipped:
        _fail(f"rank-channels: skipping {skipped} images without boxes")
    if args.sample is not None and args.sample < len(usable):
        rng = np.random.default_rng(cfg.seed)
        picks = rng.choice(len(usable), size=args.sample, replace=False)
        usable = [usable[i] for i in sorted(picks)]
    if not usable:
        _fail("rank-channels: no annotated images to rank on")
        return 1
    out = _prepare_out(cfg)
    dataset = [
        (load_rgb(find_image(images_dir, a.image_id)), a.boxes()) for a in usable
    ]
    scores = rank_channels(dataset, backend)
    write_channel_csv(scores, out / "channels.csv")
    plot_channel_scores(scores, out / "channels.png")
    summary = {
        "selected_channel": scores[0].channel,
        "images": len(dataset),
        "inside": scores[0].inside,
        "outside": scores[0].outside,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"selected channel {scores[0].channel} over {len(dataset)} images")
    return 0


def cmd_detect(args: argparse.Namespace, cfg: RunConfig) -> int:
    backend = make_backend(cfg)
    images_dir = Path(cfg.images_dir) if cfg.images_dir else None
    paths = [Path(p) for p in args.images]
    if args.fold:
        if images_dir is None:
            raise ConfigError("--fold needs --images-dir to resolve ids")
        paths.extend(find_image(images_dir, i) for i in read_fold_file(args.fold))
    if not paths:
        raise ConfigError("no input images given (positional paths or --fold)")
    out = _prepare_out(cfg)
    if args.emit_heatmaps:
        (out / "heatmaps").mkdir(exist_ok=True)
    jobs = args.jobs if backend.descriptor.concurrency_safe else 1

    def work(path: Path):
        image = load_rgb(path)
        heat = response_heatmap(backend, image, cfg.detect)
        boxes = scan_proposals(heat, cfg.detect.proposal)
        dets = classify_proposals(backend, image, boxes, cfg.detect.accept_score)
        return nms(dets, cfg.detect.nms_iou), heat

    detections: dict[str, list] = {}
    failures = 0
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [(path, pool.submit(work, path)) for path in paths]
        for path, future in futures:
            image_id = image_id_for(path, images_dir)
            try:
                dets, heat = future.result()
            except Exception as e:
                failures += 1
                _fail(f"detect: {path}: {e}")
                continue
            detections[image_id] = dets
            if args.emit_heatmaps:
                safe = image_id.replace("/", "_")
                save_heatmap_png(heat, out / "heatmaps" / f"{safe}.png")
    write_detections_fddb(detections, out / "detections.txt")
    write_detections_jsonl(detections, out / "detections.jsonl")
    total = sum(len(v) for v in detections.values())
    print(f"{total} detections over {len(detections)} images -> {out}")
    return 1 if failures else 0


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    dets_path = str(args.detections)
    if dets_path.endswith(".jsonl"):
        detections = read_detections_jsonl(dets_path)
    else:
        detections = read_detections_fddb(dets_path)
    ground_truths = _load_annotation_boxes(_require(cfg, "annotations"))
    extra = sorted(set(detections) - set(ground_truths))
    if extra:
        _fail(f"evaluate: detections for unannotated images: {extra[:5]}"
              f"{' ...' if len(extra) > 5 else ''}")
        return 1
    missing = sorted(set(ground_truths) - set(detections))
    if missing:
        _fail(f"evaluate: warning: {len(missing)} annotated images have no "
              "detection records; counting them as empty")
        for image_id in missing:
            detections[image_id] = []
    out = _prepare_out(cfg)
    summary: dict = {"protocol": args.protocol,
                     "images": len(ground_truths),
                     "total_gt": sum(len(v) for v in ground_truths.values())}
    if args.protocol == "pascal":
        dets = {
            k: [(d.score, d.box) for d in v] for k, v in detections.items()
        }
        gts = {k: [region_box(r) for r in v] for k, v in ground_truths.items()}
        ap = pascal_ap(dets, gts)
        recalls, precisions = pascal_pr(dets, gts)
        with open(out / "pr.csv", "w") as f:
            f.write("recall,precision\n")
            for r, p in zip(recalls, precisions):
                f.write(f"{r:.10g},{p:.10g}\n")
        plot_pr_curve(recalls, precisions, ap, out / "pr.png")
        summary["ap"] = ap
    else:
        dets = {
            k: [(d.score, detection_to_ellipse(d)) for d in v]
            for k, v in detections.items()
        }
        curve = roc_curve(dets, ground_truths, args.protocol)
        write_curve_csv(curve, out / f"curve_{args.protocol}.csv")
        plot_roc_curves({args.protocol: curve}, out / "roc.png")
        if curve.points:
            summary["final_fp"] = curve.points[-1][0]
            summary["final_tpr"] = curve.points[-1][1]
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oscdet",
        description="Face detection via object-specific channel heatmaps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker threads for per-image stages")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("prepare-data", help="write training crops and a manifest")
    common(p)
    p.add_argument("--annotations", help="annotation JSONL file")
    p.add_argument("--images-dir", help="root directory of source images")
    p.add_argument("--pad-fraction", type=float, default=0.5,
                   help="border fraction for padded face negatives")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("rank-channels", help="score channels against face boxes")
    common(p)
    p.add_argument("--annotations", help="annotation JSONL file")
    p.add_argument("--images-dir", help="root directory of source images")
    p.add_argument("--sample", type=int,
                   help="rank on a seeded sample of this many images")
    p.set_defaults(func=cmd_rank_channels)

    p = sub.add_parser("detect", help="run the detection pipeline on images")
    common(p)
    p.add_argument("images", nargs="*", help="image files (PNG/JPEG)")
    p.add_argument("--images-dir", help="dataset root; ids become relative paths")
    p.add_argument("--fold", help="file listing image ids to detect on")
    p.add_argument("--osc-channel", type=int, help="override the response channel")
    p.add_argument("--emit-heatmaps", action="store_true",
                   help="save each image's merged response heatmap as PNG")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    common(p)
    p.add_argument("--detections", required=True,
                   help="detections file (.jsonl or FDDB text)")
    p.add_argument("--annotations", help="annotation JSONL or FDDB ellipse file")
    p.add_argument("--protocol", choices=("discrete", "continuous", "pascal"),
                   default="discrete")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as e:
        _fail(str(e))
        return 2
    except (FileNotFoundError, ValueError) as e:
        _fail(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
