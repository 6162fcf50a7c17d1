"""
CSV Utility Module
==================

Reading and writing of the CSV artifacts produced by evaluation runs
(pr_curve.csv, roc_curve.csv, matches.csv, fov_sweep.csv).

Features:
    - Header row written once, read back and skipped
    - Floats written with repr() so files reload bit-exactly
    - Returns rows as list of tuples for pytest parametrize or comparisons

Example:
    >>> csv_writer(out / "pr_curve.csv", ("threshold", "precision", "recall"), rows)
    >>> header, rows = csv_reader(out / "pr_curve.csv")
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

_logger = logging.getLogger(__name__)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def csv_writer(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """
    Write a header row followed by data rows.

    Args:
        path: Destination file; parent directories are created.
        header: Column names.
        rows: Iterable of row sequences.

    Returns:
        int: Number of data rows written.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(file_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    _logger.info(f"CSV written | File: {file_path.name} | Rows: {count}")
    return count


def csv_reader(path) -> Tuple[Tuple[str, ...], List[Tuple[str, ...]]]:
    """
    Read a CSV file written by csv_writer.

    Returns:
        (header, rows): header tuple and the remaining rows as string tuples.
    """
    file_path = Path(path)
    _logger.debug(f"Reading CSV file: {file_path}")

    with open(file_path, newline="", encoding="utf-8") as f:
        csv_rows = csv.reader(f)
        header = tuple(next(csv_rows, ()))
        rows = [tuple(row) for row in csv_rows]

    _logger.debug(f"CSV loaded | File: {file_path.name} | Rows: {len(rows)}")
    return header, rows
