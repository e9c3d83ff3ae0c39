"""Reader for the crop manifest the data-preparation CLI writes.

The manifest is a CSV with header ``path,label,source,op``; paths are
relative to the manifest's own directory (absolute paths pass through).
Labels name the two classes: ``neg`` is class 0, ``pos`` (a face) class 1,
matching the face column the inference backend reads from the
probability head.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

LABELS = ("neg", "pos")
MANIFEST_FIELDS = ("path", "label", "source", "op")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    source: str
    op: str

    @property
    def class_index(self) -> int:
        return LABELS.index(self.label)


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """Parse a manifest; row paths come back absolute."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise ValueError(f"manifest {path} has header {reader.fieldnames}")
        for i, rec in enumerate(reader):
            if rec["label"] not in LABELS:
                raise ValueError(
                    f"manifest row {i} has unknown label {rec['label']!r}; "
                    f"expected one of {LABELS}"
                )
            p = Path(rec["path"])
            if not p.is_absolute():
                p = base / p
            rows.append(ManifestRow(str(p), rec["label"], rec["source"], rec["op"]))
    return rows


def class_counts(rows: list[ManifestRow]) -> dict[str, int]:
    counts = {label: 0 for label in LABELS}
    for row in rows:
        counts[row.label] += 1
    return counts
