"""Delimited emission of moment reports.

One fixed seven-column schema serves every table-shaped result, so plots
and diffs never have to guess at field names.  The JSON mirror uses the
same keys and the same float repr, which keeps identical runs
byte-identical on disk.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

REPORT_FIELDS = ("k", "X", "weighting", "value", "predicted_main",
                 "ratio", "sample_count")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_rows(reports) -> list[dict]:
    """Field-name -> value dicts in schema order, one per report."""
    return [{name: getattr(rep, name) for name in REPORT_FIELDS}
            for rep in reports]


def render_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_FIELDS)
    for row in report_rows(reports):
        writer.writerow([_cell(row[name]) for name in REPORT_FIELDS])
    return buf.getvalue()


def render_json(reports) -> str:
    return json.dumps(report_rows(reports), indent=2) + "\n"


def write_reports(reports, path, fmt: str = "csv") -> Path:
    """Write the table to path in the requested format and return the path."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = render_csv(reports) if fmt == "csv" else render_json(reports)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def to_jsonable(obj):
    """Recursively convert dataclasses / numpy scalars for json.dumps."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if obj is None or isinstance(obj, (int, float, str, bool)):
        return obj
    if hasattr(obj, "item"):
        return obj.item()  # numpy scalar
    return str(obj)  # Fraction, mpf, and friends


def write_json_object(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(obj), indent=2) + "\n")
    return path
