"""Detection scoring: greedy matching, ROC-style curves, average precision.

Matching is greedy in the caller's order (sort detections by score first),
claims at most one ground truth per detection, and is prefix-stable: adding
lower-ranked detections never changes earlier claims. Curves exploit that
by matching once and sweeping thresholds over the records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .detector import Detection
from .geometry import (
    BoundingBox,
    Ellipse,
    Region,
    extend_box_vertical,
    inscribe_ellipse,
    iou,
    region_iou,
)


@dataclass(frozen=True)
class MatchResult:
    """One-to-one assignment of detections to ground truths for one image."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_ground_truths: tuple[int, ...]

    def __post_init__(self) -> None:
        dets = [d for d, _, _ in self.pairs]
        gts = [g for _, g, _ in self.pairs]
        if len(set(dets)) != len(dets) or len(set(gts)) != len(gts):
            raise ValueError("matching must be one-to-one")


@dataclass(frozen=True)
class EvalCurve:
    """Operating points swept over score thresholds, highest first."""

    score_thresholds: tuple[float, ...]
    points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if len(self.score_thresholds) != len(self.points):
            raise ValueError("one point per threshold")
        if any(
            nxt >= prev
            for nxt, prev in zip(self.score_thresholds[1:], self.score_thresholds[:-1])
        ):
            raise ValueError("thresholds must be strictly descending")


def match_detections(
    dets: Sequence[Region],
    gts: Sequence[Region],
    min_iou: float = 0.5,
    iou_fn: Callable[[Region, Region], float] = region_iou,
) -> MatchResult:
    """Greedily claim, per detection in input order, the best unclaimed gt.

    A claim needs overlap strictly above min_iou. Callers pass detections
    sorted by score descending so that higher scores claim first.
    """
    claimed: dict[int, tuple[int, float]] = {}
    unmatched = []
    taken = set()
    for i, det in enumerate(dets):
        best_j = -1
        best_ov = min_iou
        for j, gt in enumerate(gts):
            if j in taken:
                continue
            ov = iou_fn(det, gt)
            if ov > best_ov:
                best_ov = ov
                best_j = j
        if best_j >= 0:
            taken.add(best_j)
            claimed[i] = (best_j, best_ov)
        else:
            unmatched.append(i)
    return MatchResult(
        pairs=tuple((i, j, ov) for i, (j, ov) in claimed.items()),
        unmatched_detections=tuple(unmatched),
        unmatched_ground_truths=tuple(j for j in range(len(gts)) if j not in taken),
    )


def fddb_scores(
    matches: Sequence[MatchResult], total_gt: int
) -> tuple[float, float]:
    """(discrete, continuous) rates over a set of per-image match results.

    Discrete counts matched detections; continuous sums their overlap
    ratios; both are divided by the ground-truth count.
    """
    if total_gt <= 0:
        raise ValueError(f"total_gt must be positive, got {total_gt}")
    tp = sum(len(m.pairs) for m in matches)
    overlap = sum(ov for m in matches for _, _, ov in m.pairs)
    return tp / total_gt, overlap / total_gt


def detection_to_ellipse(d: Detection) -> Ellipse:
    """Upright ellipse inscribed in the box after 40% vertical extension."""
    return inscribe_ellipse(extend_box_vertical(d.box, 0.40))


def _region_key(r: Region) -> tuple:
    """Deterministic sort key so score ties don't depend on input order."""
    if isinstance(r, BoundingBox):
        return (0, r.x, r.y, r.w, r.h)
    return (1, r.cx, r.cy, r.ra, r.rb, r.angle)


def _match_records(
    detections: Mapping[str, Sequence[tuple[float, Region]]],
    ground_truths: Mapping[str, Sequence[Region]],
    iou_fn: Callable[[Region, Region], float],
    min_iou: float,
) -> tuple[list[tuple[float, int, bool, float]], int]:
    """Flatten per-image greedy matches into (score, order, matched, overlap).

    Records come back sorted by score descending with a stable global order
    index breaking ties, so threshold sweeps are a single pass.
    """
    records = []
    order = 0
    for image_id in sorted(detections):
        if image_id not in ground_truths:
            raise ValueError(f"no ground truth for image {image_id!r}")
        dets = sorted(
            detections[image_id], key=lambda sr: (-sr[0], _region_key(sr[1]))
        )
        result = match_detections(
            [r for _, r in dets], ground_truths[image_id], min_iou, iou_fn
        )
        overlap_by_det = {i: ov for i, _, ov in result.pairs}
        for i, (score, _) in enumerate(dets):
            ov = overlap_by_det.get(i)
            records.append((score, order, ov is not None, ov or 0.0))
            order += 1
    records.sort(key=lambda r: (-r[0], r[1]))
    return records, sum(len(g) for g in ground_truths.values())


def roc_curve(
    detections: Mapping[str, Sequence[tuple[float, Region]]],
    ground_truths: Mapping[str, Sequence[Region]],
    protocol: str = "discrete",
    min_iou: float = 0.5,
    iou_fn: Callable[[Region, Region], float] = region_iou,
) -> EvalCurve:
    """Sweep every distinct detection score as a threshold.

    Each point is (false positive count, true positive rate) over all
    images at that threshold. The continuous protocol credits a matched
    detection with its overlap ratio instead of 1.
    """
    if protocol not in ("discrete", "continuous"):
        raise ValueError(f"unknown protocol {protocol!r}")
    records, total_gt = _match_records(detections, ground_truths, iou_fn, min_iou)
    if total_gt <= 0:
        raise ValueError("ground truth is empty")
    if not records:
        return EvalCurve(score_thresholds=(), points=())
    scores = np.array([r[0] for r in records])
    credit = np.array(
        [(r[3] if protocol == "continuous" else 1.0) if r[2] else 0.0 for r in records]
    )
    fp = np.cumsum([0.0 if r[2] else 1.0 for r in records])
    tp = np.cumsum(credit)
    # last record index per distinct score includes every tie at that score
    keep = np.nonzero(np.append(scores[1:] < scores[:-1], True))[0]
    return EvalCurve(
        score_thresholds=tuple(float(scores[k]) for k in keep),
        points=tuple((int(fp[k]), float(tp[k] / total_gt)) for k in keep),
    )


def pascal_pr(
    detections: Mapping[str, Sequence[tuple[float, BoundingBox]]],
    ground_truths: Mapping[str, Sequence[BoundingBox]],
    min_iou: float = 0.5,
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """(recalls, precisions) after each detection in global score order."""
    records, total_gt = _match_records(detections, ground_truths, iou, min_iou)
    if total_gt <= 0:
        raise ValueError("ground truth is empty")
    tp = np.cumsum([1.0 if r[2] else 0.0 for r in records])
    n = np.arange(1, len(records) + 1)
    return tuple(tp / total_gt), tuple(tp / n)


def pascal_ap(
    detections: Mapping[str, Sequence[tuple[float, BoundingBox]]],
    ground_truths: Mapping[str, Sequence[BoundingBox]],
    min_iou: float = 0.5,
) -> float:
    """Average precision with all-points interpolation over box ground truth."""
    recall, precision = (
        np.asarray(v) for v in pascal_pr(detections, ground_truths, min_iou)
    )
    if recall.size == 0:
        return 0.0
    # envelope from the right: precision at recall r is the best at any >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * envelope))


def write_curve_csv(curve: EvalCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fp_count", "tpr"])
        for t, (fp, tpr) in zip(curve.score_thresholds, curve.points):
            writer.writerow([f"{t:.10g}", fp, f"{tpr:.10g}"])


def read_curve_csv(path: str | Path) -> EvalCurve:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["threshold", "fp_count", "tpr"]:
            raise ValueError(f"curve file {path} has header {header}")
        rows = [(float(t), int(fp), float(tpr)) for t, fp, tpr in reader]
    return EvalCurve(
        score_thresholds=tuple(t for t, _, _ in rows),
        points=tuple((fp, tpr) for _, fp, tpr in rows),
    )
