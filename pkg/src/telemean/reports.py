"""Report serialization: schema validation, JSON and CSV writers.

Every JSON payload is validated against the shipped schema before it is
written, so a report on disk is always loadable by downstream tooling.
All writers emit UTF-8 with a trailing newline and are byte-deterministic
for a fixed payload.
"""

from __future__ import annotations

import csv
import io
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ValidationError

__all__ = [
    "load_schema",
    "validate_report",
    "render_json",
    "write_json_report",
    "render_csv",
    "write_csv_report",
]


@lru_cache(maxsize=1)
def load_schema() -> dict:
    """The report schema shipped with the package."""
    text = resources.files("telemean.schemas").joinpath("report.schema.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def validate_report(payload: dict) -> None:
    """Raise ValidationError unless payload matches one report shape."""
    try:
        jsonschema.validate(payload, load_schema())
    except jsonschema.ValidationError as err:
        raise ValidationError(f"report does not match schema: {err.message}") from err


def render_json(payload: dict) -> str:
    """Canonical JSON text: sorted keys, two-space indent, one trailing
    newline, so identical payloads give identical bytes."""
    validate_report(payload)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json_report(payload: dict, path: str | Path) -> None:
    Path(path).write_text(render_json(payload), encoding="utf-8")


def _flatten(payload: dict) -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    for key in sorted(payload):
        value = payload[key]
        if isinstance(value, dict):
            for sub, subvalue in _flatten(value):
                rows.append((f"{key}.{sub}", subvalue))
        elif isinstance(value, (list, tuple)):
            rows.append((key, json.dumps(value)))
        else:
            rows.append((key, json.dumps(value)))
    return rows


def render_csv(payload: dict) -> str:
    """CSV rendering of a report.

    A payload with a "points" list becomes a table (one row per point,
    columns sorted, slopes appended as key,value rows after a blank line);
    anything else becomes two-column key,value rows. Nested keys join
    with dots; list values stay JSON-encoded.
    """
    validate_report(payload)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    points = payload.get("points")
    if isinstance(points, list):
        columns = sorted({key for point in points for key in point})
        writer.writerow(columns)
        for point in points:
            writer.writerow([json.dumps(point.get(col)) for col in columns])
        writer.writerow([])
        for key, value in _flatten({k: v for k, v in payload.items() if k != "points"}):
            writer.writerow([key, value])
    else:
        writer.writerow(["field", "value"])
        for key, value in _flatten(payload):
            writer.writerow([key, value])
    return buffer.getvalue()


def write_csv_report(payload: dict, path: str | Path) -> None:
    Path(path).write_text(render_csv(payload), encoding="utf-8")
