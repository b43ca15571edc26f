# margins/utils/helpers.py
"""
margins Helper Utilities
Hashing, canonical JSON and number formatting shared by stages and reports
"""

import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import numpy as np


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    """Sorted keys, fixed indentation, trailing newline: byte-stable across runs"""
    return json.dumps(data, sort_keys=True, indent=2, default=_default, allow_nan=False) + "\n"


def write_json(path: Path, data: Any) -> None:
    Path(path).write_text(canonical_json(data), encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# Placeholder for undefined table cells (em dash)
UNDEFINED = "\u2014"


def format_pct(value: Optional[float], digits: int = 1) -> str:
    """Percentage cell; undefined values render as UNDEFINED"""
    if value is None or not math.isfinite(value):
        return UNDEFINED
    return f"{value:.{digits}f}%"


def format_decimal(value: Optional[float], digits: int = 3) -> str:
    if value is None or not math.isfinite(value):
        return UNDEFINED
    return f"{value:.{digits}f}"
