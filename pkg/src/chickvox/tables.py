"""Flat-file formats: CSV schemas, readers and writers, manifest hashing.

Times are written in seconds with 6 decimals; other reals with 12
significant digits; missing values as empty fields.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

from .detection import CallSegment
from .features import FEATURE_NAMES

SEGMENT_COLUMNS = ("source_id", "onset_s", "offset_s")
FEATURE_COLUMNS = SEGMENT_COLUMNS + FEATURE_NAMES
ASSIGNMENT_COLUMNS = SEGMENT_COLUMNS + ("cluster",)
METADATA_COLUMNS = ("source_id", "chick_id", "condition")
# headings follow the published detection table
EVAL_SUMMARY_COLUMNS = ("Task", "Method", "Weighted F1-measure", "Weighted Precision", "Weighted Recall")
REPRESENTATIVE_COLUMNS = ("method", "k", "cluster", "rank", "source_id", "onset_s", "offset_s", "distance")
BINNED_COLUMNS = ("condition", "cluster", "bin", "n_chicks", "mean", "sem")
PER_CHICK_COLUMNS = ("condition", "chick_id", "cluster", "bin", "count")
SUMMARY_COLUMNS = ("group", "cluster", "feature", "n", "mean", "sd")
VIF_COLUMNS = ("feature", "vif", "flagged")

TIME_FIELDS = {"onset_s", "offset_s"}


class SchemaError(ValueError):
    pass


def fmt(value, field: str = "") -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if field in TIME_FIELDS:
            return f"{value:.6f}"
        return format(value, ".12g")
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Mapping]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c), c) for c in columns])
    return path


def read_csv(path, columns: Sequence[str] | None = None) -> list[dict[str, str]]:
    """Rows as string dicts; with ``columns``, the header must contain them all."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if columns is not None:
            missing = [c for c in columns if c not in header]
            if missing:
                raise SchemaError(f"{path}: missing columns {missing}")
        return list(reader)


def parse_float(s: str) -> float | None:
    s = s.strip()
    return None if s == "" else float(s)


def write_segments(path, segments: Iterable[CallSegment]) -> Path:
    return write_csv(path, SEGMENT_COLUMNS, (
        {"source_id": s.source_id, "onset_s": s.onset_s, "offset_s": s.offset_s} for s in segments))


def read_segments(path) -> dict[str, list[CallSegment]]:
    """Segments grouped by source id, each list sorted by onset."""
    out: dict[str, list[CallSegment]] = defaultdict(list)
    for row in read_csv(path, SEGMENT_COLUMNS):
        out[row["source_id"]].append(
            CallSegment(float(row["onset_s"]), float(row["offset_s"]), row["source_id"]))
    return {k: sorted(v, key=lambda s: s.onset_s) for k, v in sorted(out.items())}


def read_metadata(path) -> list[dict[str, str]]:
    return read_csv(path, METADATA_COLUMNS)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
