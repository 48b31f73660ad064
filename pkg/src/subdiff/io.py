"""Small serialization helpers shared by the modules and the runner."""
from __future__ import annotations

import csv
import json
import subprocess
from functools import lru_cache
from pathlib import Path

import numpy as np


@lru_cache(maxsize=1)
def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version

    try:
        return "artifact-" + version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_csv(path, header, columns):
    """Write equal-length columns under ``header``; floats use repr for exact round trips."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(v.item()) if hasattr(v, "item") else repr(v) for v in row])


def read_csv(path):
    """Return ``(header, 2-d float array)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return header, data


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dump_json(obj, path=None, **kw):
    text = json.dumps(obj, default=_default, indent=2, **kw)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
