"""CSV input for the command line and experiment specs."""

from __future__ import annotations

import csv

import numpy as np


class InputError(ValueError):
    """Unreadable or malformed user input."""


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_csv(path: str) -> np.ndarray:
    """Numeric CSV as an ``(rows, columns)`` array; a non-numeric first row is a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise InputError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InputError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    try:
        x = np.array([[float(c) for c in r] for r in rows])
    except ValueError:
        raise InputError(f"{path}: non-numeric value in a data row") from None
    if not np.all(np.isfinite(x)):
        raise InputError(f"{path}: non-finite value")
    return x
