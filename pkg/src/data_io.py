"""
Reading observation and matrix files.

Observation files are CSV with one row per observation and one numeric
column per variable. Commas, semicolons, tabs and runs of spaces are all
accepted as separators. A header row is recognized when any of its cells
is neither a number nor a missing-value marker.
"""

from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import ShapeError
from .symmetric import as_symmetric

MISSING_TOKENS = ("NA", "na", "N/A", "nan", "NaN", "NULL", "null", "None", "none", "?")
DELIMITERS = (",", ";", "\t")


def _delimiter(line: str) -> Optional[str]:
    for candidate in DELIMITERS:
        if candidate in line:
            return candidate
    return None


def _cells(line: str, delimiter: Optional[str]) -> List[str]:
    return [cell.strip() for cell in line.split(delimiter)]


def _is_header(cells: List[str]) -> bool:
    for cell in cells:
        if cell in MISSING_TOKENS or cell == "":
            continue
        try:
            float(cell)
        except ValueError:
            return True
    return False


def read_csv_table(path) -> Tuple[List[str], np.ndarray]:
    """(header, values) of a numeric CSV file; the header may be empty."""
    csv_path = Path(path)
    if not csv_path.is_file():
        raise FileNotFoundError(f"data file not found: {csv_path}")
    lines = [line for line in csv_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise ShapeError(f"{csv_path}: file is empty")

    delimiter = _delimiter(lines[0])
    header: List[str] = []
    if _is_header(_cells(lines[0], delimiter)):
        header, lines = _cells(lines[0], delimiter), lines[1:]
    if not lines:
        raise ShapeError(f"{csv_path}: no data rows")
    width = len(_cells(lines[0], delimiter))
    if header and len(header) != width:
        raise ShapeError(f"{csv_path}: header has {len(header)} columns, data has {width}")

    try:
        values = np.genfromtxt(
            lines,
            delimiter=delimiter,
            dtype=float,
            autostrip=True,
            missing_values=MISSING_TOKENS,
            filling_values=np.nan,
            invalid_raise=True,
        )
    except ValueError as exc:
        raise ShapeError(f"{csv_path}: {exc}") from exc
    values = np.asarray(values, dtype=float).reshape(len(lines), width)

    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = (int(v) + 1 for v in bad[0])
        raise ShapeError(f"{csv_path}: missing or non-numeric value in row {r}, column {c}")
    return header, values


def read_data(path) -> np.ndarray:
    """n x q observation matrix from a CSV file."""
    _, values = read_csv_table(path)
    return values


def read_matrix(path) -> np.ndarray:
    """Symmetric matrix stored as a square CSV table."""
    _, values = read_csv_table(path)
    if values.shape[0] != values.shape[1]:
        raise ShapeError(f"{path}: matrix is {values.shape[0]} x {values.shape[1]}, expected square")
    # files written with limited precision may be asymmetric in the last digit
    if not np.allclose(values, values.T, rtol=1e-10, atol=1e-12):
        raise ShapeError(f"{path}: matrix is not symmetric")
    return as_symmetric((values + values.T) / 2.0, str(path))
