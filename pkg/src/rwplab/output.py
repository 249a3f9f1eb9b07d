"""Deterministic JSON/CSV emission with atomic writes.

JSON is written with sorted keys and a fixed float format (``repr``), with
non-finite floats mapped to ``null``.  Nothing time- or host-dependent goes
into an output file, so identical inputs give byte-identical files.
"""

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile

import numpy as np

SCHEMA_VERSION = 1


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` through a temporary file and rename."""
    if isinstance(data, str):
        data = data.encode()
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "as_dict"):
            return to_jsonable(obj.as_dict())
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "params"):
        return to_jsonable(obj.params())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(config):
    canon = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def envelope(command, config, seed, result):
    """Standard wrapper: tool version, schema version, config echo and seed."""
    from . import __version__

    return {
        "tool": "rwplab",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "result": result,
    }


def write_json(path, obj):
    atomic_write(path, dumps(obj))


def _cell(v):
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return repr(f) if math.isfinite(f) else ""
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return "" if v is None else str(v)


def csv_text(rows, fields):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(f)) for f in fields])
    return buf.getvalue()


def write_csv(path, rows, fields):
    atomic_write(path, csv_text(rows, fields))
