"""Command line: fine-tune from a manifest, or generate a toy training set."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError
from .scenes import write_toy_set
from .train import TrainConfig, finetune


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osctrain",
        description="Fine-tune the two-class face network and export it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fine-tune from a crop manifest")
    train.add_argument("--manifest", required=True, help="crop manifest CSV")
    train.add_argument("--out", required=True, help="exported model path (.npz)")
    train.add_argument("--report", help="report JSON path (default: beside the model)")
    train.add_argument("--pretrained", default="random:0",
                       help="weights file, or random[:seed] (default random:0)")
    train.add_argument("--epochs", type=int, default=2)
    train.add_argument("--batch-size", type=int, default=16)
    train.add_argument("--learning-rate", type=float, default=3e-4)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--val-fraction", type=float, default=0.2)
    train.add_argument("--feature-layer", default="relu5")
    train.add_argument("--input-side", type=int, default=227)

    toy = sub.add_parser("make-toy", help="write a synthetic disc/masked set")
    toy.add_argument("--out", required=True, help="output directory")
    toy.add_argument("--count", type=int, default=200)
    toy.add_argument("--side", type=int, default=160)
    toy.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-toy":
            manifest = write_toy_set(args.out, args.count, args.side, args.seed)
            print(f"wrote {args.count} scenes, manifest {manifest}")
            return 0
        cfg = TrainConfig(
            manifest=args.manifest,
            export_path=args.out,
            report_path=args.report,
            pretrained=args.pretrained,
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            val_fraction=args.val_fraction,
            feature_layer=args.feature_layer,
            input_side=args.input_side,
        )
        result = finetune(cfg)
    except (ValueError, ExportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    final = result.report["final"]
    print(
        f"exported {result.model_path} "
        f"(train acc {final['train_accuracy']:.3f}, "
        f"val acc {final['val_accuracy']:.3f}); report {result.report_path}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
