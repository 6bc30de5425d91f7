"""CSV tables and the JSON run manifest. Floats are written with repr so
reruns with the same seed are byte-identical."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from importlib import metadata
from pathlib import Path

_PACKAGES = ("perfolab", "numpy", "scipy", "shapely", "triangle", "matplotlib", "pydantic")


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(v))
    if hasattr(v, "item"):           # numpy scalar
        return _cell(v.item())
    return "" if v is None else str(v)


def rows_to_csv(rows, columns=None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None) -> str:
    text = rows_to_csv(rows, columns)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    out = {"python": platform.python_version()}
    for name in _PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


def write_manifest(path, config, outputs: dict, summary: dict) -> None:
    doc = {
        "config": config.model_dump(mode="json"),
        "config_sha256": config.digest(),
        "seeds": config.replicate_seeds,
        "versions": versions(),
        "outputs": outputs,
        "summary": summary,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(v):
    if hasattr(v, "item"):
        return v.item()
    if hasattr(v, "tolist"):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v)}")
