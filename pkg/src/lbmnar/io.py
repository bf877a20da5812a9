"""Matrix file formats and result serialization.

Two CSV dialects are accepted:

* ternary-csv: tokens ``0``, ``1``, ``NA`` (case-insensitive) or empty.
* votes-csv: header row of column identifiers, leading row-identifier
  column, tokens ``for`` -> 1, ``against`` -> 0, ``abstained``/``absent``
  -> missing.

Result JSON files are flat dictionaries with matrices as row-major nested
lists; every float is rendered with 17 significant digits so re-runs are
byte-comparable.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .model import CELL_MISSING, CELL_ONE, CELL_ZERO, ObservedMatrix


class ParseError(ValueError):
    pass


_TERNARY_TOKENS = {"0": CELL_ZERO, "1": CELL_ONE, "na": CELL_MISSING,
                   "": CELL_MISSING}
_VOTE_TOKENS = {"for": CELL_ONE, "against": CELL_ZERO,
                "abstained": CELL_MISSING, "absent": CELL_MISSING}


def _parse_rows(rows, tokens, path, fmt):
    cells = []
    width = None
    for r, row in rows:
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{path}: ragged row at line {r + 1} "
                             f"({len(row)} fields, expected {width})")
        parsed = []
        for c, tok in enumerate(row):
            key = tok.strip().lower()
            if key not in tokens:
                raise ParseError(f"{path}: unknown {fmt} token {tok!r} "
                                 f"at line {r + 1}, column {c + 1}")
            parsed.append(tokens[key])
        cells.append(parsed)
    if not cells:
        raise ParseError(f"{path}: no data rows")
    return ObservedMatrix(np.array(cells, dtype=np.int8))


def load_matrix(path, format: str = "ternary-csv") -> ObservedMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = list(csv.reader(fh))
    if format == "ternary-csv":
        rows = list(enumerate(reader))
        # tolerate an optional non-numeric header row
        if rows and any(t.strip().lower() not in _TERNARY_TOKENS
                        for t in rows[0][1]):
            rows = rows[1:]
        return _parse_rows(rows, _TERNARY_TOKENS, path, "ternary")
    if format == "votes-csv":
        if len(reader) < 2:
            raise ParseError(f"{path}: votes-csv needs a header and data rows")
        rows = [(r, row[1:]) for r, row in enumerate(reader) if r > 0]
        return _parse_rows(rows, _VOTE_TOKENS, path, "vote")
    raise ParseError(f"unknown matrix format: {format}")


def save_matrix(x: ObservedMatrix, path) -> None:
    lookup = {CELL_ZERO: "0", CELL_ONE: "1", CELL_MISSING: "NA"}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in x.cells:
            writer.writerow([lookup[int(v)] for v in row])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _format_floats(obj):
    if isinstance(obj, float):
        return float(format(obj, ".17g"))
    if isinstance(obj, dict):
        return {k: _format_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_format_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _format_floats(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _format_floats(float(obj))
    return obj


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_format_floats(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
