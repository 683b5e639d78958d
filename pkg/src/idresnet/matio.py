"""Matrix serialization: JSON ``{"rows", "cols", "data"}`` and headerless CSV."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .matcore import as_matrix


def matrix_to_json(M: np.ndarray) -> dict:
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    return {"rows": int(A.shape[0]), "cols": int(A.shape[1]), "data": [float(x) for x in A.ravel()]}


def matrix_from_json(obj) -> np.ndarray:
    """Parse the JSON matrix object.  A bare nested list is accepted too."""
    if isinstance(obj, list):
        return as_matrix(obj)
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix object: {exc}") from exc
    if len(data) != rows * cols:
        raise ValueError(f"matrix data has {len(data)} entries, expected {rows}x{cols}")
    return as_matrix(np.asarray(data, dtype=float).reshape(rows, cols))


def read_matrix(path) -> np.ndarray:
    """Read a matrix from a ``.json`` file or a headerless CSV file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith(("{", "[")):
        return matrix_from_json(json.loads(text))
    rows = [line for line in text.splitlines() if line.strip()]
    return as_matrix([[float(x) for x in line.split(",")] for line in rows])


def write_matrix(path, M: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        A = np.atleast_2d(np.asarray(M, dtype=float))
        path.write_text("".join(",".join(repr(float(x)) for x in row) + "\n" for row in A))
    else:
        path.write_text(json.dumps(matrix_to_json(M)))
