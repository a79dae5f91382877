"""Plain-text field snapshots.

Format, one snapshot per file:

    NLCH-SNAPSHOT 1
    <N> <L> <time>
    <N lines of N values, row-major, 17 significant digits>

Values round-trip bit exactly (17 significant digits suffice for IEEE
doubles).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import SnapshotFormatError
from .grid import Field, field_from_array, make_grid

__all__ = ["write_snapshot", "read_snapshot", "snapshot_text", "parse_snapshot_text"]

MAGIC = "NLCH-SNAPSHOT"
VERSION = 1


def snapshot_text(field: Field, time: float) -> str:
    g = field.grid
    lines = [f"{MAGIC} {VERSION}", f"{g.n} {format(g.length, '.17g')} {format(time, '.17g')}"]
    for i in range(g.n):
        lines.append(" ".join(format(v, ".17g") for v in field.values[i]))
    return "\n".join(lines) + "\n"


def write_snapshot(field: Field, path, time: float) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(snapshot_text(field, time))
    os.replace(tmp, path)


def parse_snapshot_text(text: str) -> tuple[Field, float]:
    lines = text.splitlines()
    if not lines:
        raise SnapshotFormatError("empty snapshot")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise SnapshotFormatError(f"bad snapshot header {lines[0]!r}")
    if head[1] != str(VERSION):
        raise SnapshotFormatError(f"unsupported snapshot version {head[1]!r}")
    if len(lines) < 2:
        raise SnapshotFormatError("missing snapshot size line")
    meta = lines[1].split()
    if len(meta) != 3:
        raise SnapshotFormatError(f"bad snapshot size line {lines[1]!r}")
    try:
        n = int(meta[0])
        length = float(meta[1])
        time = float(meta[2])
    except ValueError as exc:
        raise SnapshotFormatError(f"bad snapshot size line {lines[1]!r}") from exc
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != n:
        raise SnapshotFormatError(f"expected {n} data rows, found {len(rows)}")
    try:
        values = np.array([[float(tok) for tok in row.split()] for row in rows])
    except ValueError as exc:
        raise SnapshotFormatError("non-numeric snapshot data") from exc
    if values.shape != (n, n):
        raise SnapshotFormatError(
            f"expected {n}x{n} values, found rows of lengths {[len(r.split()) for r in rows[:3]]}..."
        )
    grid = make_grid(n, length)
    return field_from_array(grid, values, check=False), time


def read_snapshot(path) -> tuple[Field, float]:
    with open(path, "r", encoding="ascii") as fh:
        return parse_snapshot_text(fh.read())
