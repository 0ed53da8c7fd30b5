"""Node sets on axis-aligned boxes: tensor grids and Halton points.

Point sets are ``(N, d)`` float arrays. The default box is ``[-1, 1]^2``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))
DEFAULT_BOX = ((-1.0, 1.0), (-1.0, 1.0))
HALTON_BASES = (2, 3)


def equispaced_grid(side: int, box=DEFAULT_BOX) -> np.ndarray:
    """``side**d`` points, endpoints included, last coordinate varying fastest."""
    if side < 2:
        raise ValueError("grid side must be >= 2")
    axes = [np.linspace(lo, hi, side) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def radical_inverse(index: int, base: int) -> float:
    """Digit reversal of ``index`` about the radix point, correctly rounded."""
    num, den = 0, 1
    while index > 0:
        index, digit = divmod(index, base)
        num = num * base + digit
        den *= base
    return num / den


def halton_points(count: int, box=DEFAULT_BOX, bases=HALTON_BASES) -> np.ndarray:
    """First ``count`` Halton points, starting from index 1 (the origin is skipped)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(bases) != len(box):
        raise ValueError("one base per box dimension is required")
    unit = np.array(
        [[radical_inverse(i, b) for b in bases] for i in range(1, count + 1)]
    )
    lo = np.array([b[0] for b in box], dtype=np.float64)
    hi = np.array([b[1] for b in box], dtype=np.float64)
    return lo + (hi - lo) * unit


def read_csv(path) -> np.ndarray:
    """Read points from a CSV with header ``x1,x2,...``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or not all(h.strip().startswith("x") for h in header):
            raise ValueError(f"{path}: expected a header like x1,x2")
        rows = [[float(v) for v in row] for row in reader if row]
    pts = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    if pts.shape[0] == 0:
        raise ValueError(f"{path}: no points")
    return pts


def write_csv(path, points) -> None:
    points = np.asarray(points, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(points.shape[1])])
        for row in points:
            writer.writerow([repr(float(v)) for v in row])


def from_spec(spec: str, box=DEFAULT_BOX) -> np.ndarray:
    """Build a point set from ``grid:SIDE``, ``halton:COUNT`` or ``csv:PATH``."""
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        return equispaced_grid(int(arg), box)
    if kind == "halton":
        return halton_points(int(arg), box)
    if kind == "csv":
        return read_csv(arg)
    raise ValueError(f"unknown point-set spec {spec!r} (grid:N | halton:N | csv:PATH)")
