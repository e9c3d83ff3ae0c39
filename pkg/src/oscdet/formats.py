"""File formats: FDDB fold and ellipse files, JSONL annotations, detections.

FDDB ellipse annotations come as blocks: an image path line, a count line,
then one `major_radius minor_radius angle center_x center_y 1` line per
face. FDDB measures the major-axis angle from the x-axis, while Ellipse
puts the ra axis along y at angle 0, so parsing subtracts pi/2.

Detections are written twice over: the FDDB submission text layout
(image line, count line, `x y w h score` lines) and line-delimited JSON
records, which are easier to stream and join.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping, Sequence

from .dataprep import Annotation
from .detector import Detection
from .geometry import BoundingBox, Ellipse


def read_fold_file(path: str | Path) -> list[str]:
    """Image identifiers, one per line; blank lines are skipped."""
    ids = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                ids.append(line)
    return ids


def read_fddb_ellipses(path: str | Path) -> dict[str, list[Ellipse]]:
    """Parse an FDDB ellipse annotation file into per-image ellipses."""
    out: dict[str, list[Ellipse]] = {}
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f]
    i = 0
    while i < len(lines):
        image_id = lines[i].strip()
        if not image_id:
            i += 1
            continue
        if i + 1 >= len(lines):
            raise ValueError(f"{path}:{i + 1}: image line without a count line")
        try:
            count = int(lines[i + 1])
        except ValueError:
            raise ValueError(
                f"{path}:{i + 2}: expected a face count, got {lines[i + 1]!r}"
            ) from None
        if count < 0 or i + 2 + count > len(lines):
            raise ValueError(f"{path}:{i + 2}: bad face count {count}")
        faces = []
        for k in range(count):
            line_no = i + 3 + k
            fields = lines[i + 2 + k].split()
            if len(fields) != 6:
                raise ValueError(
                    f"{path}:{line_no}: expected 6 fields, got {len(fields)}"
                )
            try:
                major, minor, angle, cx, cy = (float(v) for v in fields[:5])
            except ValueError:
                raise ValueError(
                    f"{path}:{line_no}: non-numeric ellipse fields"
                ) from None
            faces.append(
                Ellipse(cx=cx, cy=cy, ra=major, rb=minor, angle=angle - math.pi / 2)
            )
        if image_id in out:
            raise ValueError(f"{path}: duplicate annotations for {image_id!r}")
        out[image_id] = faces
        i += 2 + count
    return out


def read_annotations_jsonl(path: str | Path) -> list[Annotation]:
    """One {image_id, boxes:[{x,y,w,h}]} record per line."""
    annotations = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                boxes = tuple(
                    BoundingBox(b["x"], b["y"], b["w"], b["h"])
                    for b in record["boxes"]
                )
                annotations.append(Annotation(record["image_id"], boxes))
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{line_no}: bad annotation record: {e}") from e
    return annotations


def write_annotations_jsonl(
    annotations: Sequence[Annotation], path: str | Path
) -> None:
    with open(path, "w") as f:
        for ann in annotations:
            record = {
                "image_id": ann.image_id,
                "boxes": [
                    {"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in ann.boxes()
                ],
            }
            f.write(json.dumps(record) + "\n")


def write_detections_fddb(
    detections: Mapping[str, Sequence[Detection]], path: str | Path
) -> None:
    """FDDB submission layout; images in mapping order, zero counts included."""
    with open(path, "w") as f:
        for image_id, dets in detections.items():
            f.write(f"{image_id}\n{len(dets)}\n")
            for d in dets:
                f.write(
                    f"{d.box.x:.10g} {d.box.y:.10g} {d.box.w:.10g} "
                    f"{d.box.h:.10g} {d.score:.10g}\n"
                )


def read_detections_fddb(path: str | Path) -> dict[str, list[Detection]]:
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f]
    out: dict[str, list[Detection]] = {}
    i = 0
    while i < len(lines):
        image_id = lines[i].strip()
        if not image_id:
            i += 1
            continue
        if i + 1 >= len(lines):
            raise ValueError(f"{path}:{i + 1}: image line without a count line")
        try:
            count = int(lines[i + 1])
        except ValueError:
            raise ValueError(
                f"{path}:{i + 2}: expected a detection count, got {lines[i + 1]!r}"
            ) from None
        if count < 0 or i + 2 + count > len(lines):
            raise ValueError(f"{path}:{i + 2}: bad detection count {count}")
        dets = []
        for k in range(count):
            line_no = i + 3 + k
            fields = lines[i + 2 + k].split()
            if len(fields) != 5:
                raise ValueError(
                    f"{path}:{line_no}: expected 5 fields, got {len(fields)}"
                )
            try:
                x, y, w, h, score = (float(v) for v in fields)
                dets.append(Detection(BoundingBox(x, y, w, h), score))
            except ValueError as e:
                raise ValueError(f"{path}:{line_no}: bad detection: {e}") from None
        if image_id in out:
            raise ValueError(f"{path}: duplicate detections for {image_id!r}")
        out[image_id] = dets
        i += 2 + count
    return out


def write_detections_jsonl(
    detections: Mapping[str, Sequence[Detection]], path: str | Path
) -> None:
    """One record per detection; images with none still appear once."""
    with open(path, "w") as f:
        for image_id, dets in detections.items():
            if not dets:
                f.write(json.dumps({"image_id": image_id, "count": 0}) + "\n")
            for d in dets:
                record = {
                    "image_id": image_id,
                    "x": d.box.x,
                    "y": d.box.y,
                    "w": d.box.w,
                    "h": d.box.h,
                    "score": d.score,
                }
                f.write(json.dumps(record) + "\n")


def read_detections_jsonl(path: str | Path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                image_id = record["image_id"]
                out.setdefault(image_id, [])
                if record.get("count") == 0:
                    continue
                out[image_id].append(
                    Detection(
                        BoundingBox(
                            record["x"], record["y"], record["w"], record["h"]
                        ),
                        record["score"],
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{line_no}: bad detection record: {e}") from e
    return out
