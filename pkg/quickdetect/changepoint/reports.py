"""
Report files: JSON for reports, CSV for curves, both with a header block
"""
import csv
import io
import json
import logging
import math
from dataclasses import asdict, is_dataclass
from importlib import resources

import jsonschema
import numpy as np
from django.conf import settings


logger = logging.getLogger("quickdetect.reports")

SIGNIFICANT_DIGITS = 12
FORMATS = ("json", "csv")


def _number(value):
    if not math.isfinite(value):
        return None
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def normalize(value):
    """Plain JSON types with floats rounded to 12 significant digits."""
    if hasattr(value, "as_dict"):
        return normalize(value.as_dict())
    if is_dataclass(value) and not isinstance(value, type):
        return normalize(asdict(value))
    if isinstance(value, dict):
        return {str(key): normalize(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [normalize(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _number(float(value))
    if value is None or isinstance(value, str):
        return value
    return str(value)


def make_header(config=None, seed=None, grid_size=None, command=None):
    return normalize({
        "tool": "quickdetect",
        "version": settings.VERSION,
        "command": command,
        "config": config or {},
        "seed": seed,
        "grid_size": grid_size,
    })


def report_schema():
    text = resources.files("quickdetect.changepoint").joinpath("schemas/report.schema.json")
    return json.loads(text.read_text(encoding="utf-8"))


def render_json(report, header):
    document = {"header": header, "report": normalize(report)}
    jsonschema.validate(document, report_schema())
    return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_csv(rows, header, columns=None):
    """Header block as '# key: value' lines, then a column row and the data rows."""
    rows = [normalize(row) for row in rows]
    columns = list(columns or (rows[0].keys() if rows else []))
    buffer = io.StringIO()
    for key in sorted(header):
        buffer.write(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(column) is None else
                         (f"{row[column]:.{SIGNIFICANT_DIGITS}g}" if isinstance(row[column], float)
                          else row[column]) for column in columns])
    return buffer.getvalue()


def emit_report(report, format="json", path=None, header=None, stream=None, columns=None):
    """Write ``report`` to ``path`` (or ``stream``) and return the text.

    For CSV, ``report`` is a list of row mappings. Identical inputs give
    byte-identical output.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")
    header = header if header is not None else make_header()
    text = render_json(report, header) if format == "json" else render_csv(report, header, columns)
    if path and path != "-":
        try:
            with open(path, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
        logger.info("Wrote %s report to %s", format, path)
    elif stream is not None:
        stream.write(text)
    return text
