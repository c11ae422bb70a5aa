"""CSV and metadata emission.

Every export is UTF-8, comma-separated, with a header row and a leading
`schema_version` column; dates are ISO-8601. Files are written atomically
(temp file in the target directory, then rename), and every command drops a
JSON metadata file capturing the exact configuration and seeds so any artifact
can be regenerated.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__

SCHEMAS = {
    "coverage": "coverage.v1",
    "training_log": "training-log.v1",
    "baseline": "baseline.v1",
    "robustness": "robustness.v1",
    "robustness_summary": "robustness-summary.v1",
    "metrics": "metrics.v1",
    "rollout": "rollout.v1",
}


def _atomic_write(path: Path, write_fn) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            write_fn(handle)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def fmt(value) -> str:
    """Stable scalar formatting: floats via repr (shortest round-trip)."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, schema: str, header: list[str], rows) -> None:
    version = SCHEMAS[schema]

    def write(handle):
        writer = csv.writer(handle)
        writer.writerow(["schema_version"] + header)
        for row in rows:
            writer.writerow([version] + [fmt(v) for v in row])

    _atomic_write(Path(path), write)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (dt.date, dt.datetime)):
        return obj.isoformat()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_metadata(path: str | Path, command: str, config, seeds, extra: dict | None = None) -> None:
    doc = {
        "schema_version": "run-metadata.v1",
        "package_version": __version__,
        "command": command,
        "seeds": _jsonable(seeds),
        "config": _jsonable(config),
    }
    if extra:
        doc["extra"] = _jsonable(extra)
    _atomic_write(Path(path), lambda h: h.write(json.dumps(doc, indent=1) + "\n"))


def read_csv(path: str | Path) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        rows = list(reader)
    return list(reader.fieldnames or []), rows
