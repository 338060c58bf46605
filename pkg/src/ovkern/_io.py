"""JSON document helpers shared by the dataset and model formats."""

import json
import math
import os
import tempfile

import numpy as np

from .errors import DataFormatError
from .funcspace import Grid


def write_text_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ovkern-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_document(doc: dict) -> str:
    # repr-based float output round-trips exactly
    return json.dumps(doc, allow_nan=False, indent=1) + "\n"


def _reject_constant(name):
    raise DataFormatError(f"non-finite value {name} is not allowed")


def load_document(path, expected_format: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise DataFormatError(
            f"{path}: malformed document at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    fmt = doc.get("format")
    if fmt != expected_format:
        raise DataFormatError(f"{path}: format tag {fmt!r}, expected {expected_format!r}")
    return doc


def field(doc: dict, key: str, where: str):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise DataFormatError(f"{where}: missing field {key!r}") from None


def float_array(value, where: str, ndim: int = 1) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: expected numbers ({exc})") from None
    if arr.ndim != ndim:
        raise DataFormatError(f"{where}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{where}: non-finite values")
    return arr


def grid_from(value, where: str) -> Grid:
    pts = float_array(value, where)
    try:
        return Grid(pts)
    except ValueError as exc:
        raise DataFormatError(f"{where}: {exc}") from None


def check_length(arr: np.ndarray, grid: Grid, where: str):
    if arr.shape[-1] != len(grid):
        raise DataFormatError(f"{where}: {arr.shape[-1]} values for a {len(grid)}-point grid")


def is_finite_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
