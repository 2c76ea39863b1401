"""Delimited text output with a frozen formatting contract.

Floats print with 17 significant digits so values round-trip bit exactly;
booleans print lowercase; missing entries print empty.  Files are written
to a temporary sibling and renamed into place, so readers never observe a
half-written table and identical inputs yield byte-identical files.
"""

from __future__ import annotations

import csv
import os
import tempfile

import numpy as np

__all__ = ["format_cell", "read_rows", "write_csv"]


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, header, rows) -> str:
    """Write one table atomically; returns the path."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([format_cell(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_rows(path: str):
    """Read one table back as (header, list of string rows)."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        rows = list(reader)
    if not rows:
        raise ValueError("empty table %s" % path)
    return rows[0], rows[1:]
