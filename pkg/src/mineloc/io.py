"""CSV tables with a commented metadata header, and config hashing.

Table layout::

    # format: mineloc-table/1
    # key: value            (one line per metadata entry)
    col_a,col_b,...
    1,0.25,...

Floats are written with ``repr`` so a write/read round trip is exact and
repeated runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

TABLE_FORMAT = "mineloc-table/1"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns, rows, meta=None) -> Path:
    """Write ``rows`` (iterable of sequences) under ``columns``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# format: {TABLE_FORMAT}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {_fmt(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_columns(path, data: dict, meta=None) -> Path:
    """Write equal-length column arrays keyed by column name."""
    cols = list(data)
    arrays = [np.asarray(data[c]) for c in cols]
    n = len(arrays[0]) if arrays else 0
    if any(len(a) != n for a in arrays):
        raise ValueError("columns differ in length")
    rows = (tuple(_scalar(a[i]) for a in arrays) for i in range(n))
    return write_table(path, cols, rows, meta)


def _scalar(v):
    return v.item() if isinstance(v, np.generic) else v


def read_table(path):
    """Return ``(meta, columns, rows)`` with numeric cells parsed as float."""
    meta, lines = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition(": ")
                meta[k] = v
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    rows = []
    for r in reader:
        parsed = []
        for v in r:
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append(v)
        rows.append(parsed)
    return meta, columns, rows


def read_columns(path):
    """Return ``(meta, {column: np.ndarray})``."""
    meta, cols, rows = read_table(path)
    data = {c: np.array([r[k] for r in rows]) for k, c in enumerate(cols)}
    return meta, data


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_hash(config) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path
