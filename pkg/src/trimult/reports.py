"""Bit-stable report emission, atomic writes and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from trimult import __version__


def _plain(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _check_finite(obj, path="results"):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")
    elif isinstance(obj, float) and math.isnan(obj):
        raise ValueError(f"{path} is NaN")


def to_json_text(results) -> str:
    """Sorted keys; floats through repr, which round-trips doubles exactly."""
    data = _plain(results)
    _check_finite(data)
    return json.dumps(data, sort_keys=True, indent=1, allow_nan=True) + "\n"


def to_csv_text(rows: list[dict], columns: list[str] | None = None) -> str:
    rows = [_plain(r) for r in rows]
    if columns is None:
        columns = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in (r.get(c, "") for c in columns)])
    return buf.getvalue()


def digest(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


def atomic_write(path: str, text: str) -> str:
    """Write via a temp file in the same directory, then rename; returns the sha256 digest."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    data = text.encode()
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return digest(data)


def emit_report(results, fmt: str, path: str) -> str:
    if fmt == "json":
        text = to_json_text(results)
    elif fmt == "csv":
        text = to_csv_text(results)
    elif fmt == "text":
        text = results
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return atomic_write(path, text)


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    wall_clock: float = 0.0
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256

    def to_dict(self) -> dict:
        return asdict(self)

    def verify(self, directory: str) -> list[str]:
        bad = []
        for name, dg in self.outputs.items():
            p = os.path.join(directory, name)
            if not os.path.exists(p):
                bad.append(f"{name}: missing")
                continue
            with open(p, "rb") as fh:
                if digest(fh.read()) != dg:
                    bad.append(f"{name}: digest mismatch")
        return bad
