"""File plumbing shared by the CLI stages: atomic writes and stable JSON."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

DECIMALS = 6


def sidecar_path(path) -> Path:
    """``cohort.csv`` -> ``cohort.meta.json``."""
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rounded(obj, decimals: int = DECIMALS):
    """Recursively round floats (and numpy scalars) for byte-stable output.

    Non-finite floats become ``None`` except infinity, which is spelled "inf".
    """
    if isinstance(obj, dict):
        return {str(k): rounded(v, decimals) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v, decimals) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist(), decimals)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        x = round(x, decimals)
        return 0.0 if x == 0 else x
    return obj


def dumps_json(obj, decimals: int = DECIMALS) -> str:
    return json.dumps(rounded(obj, decimals), indent=2, sort_keys=True) + "\n"
