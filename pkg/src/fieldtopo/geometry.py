"""Axis-aligned boxes and grid bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

# relative slack for "is an integer multiple of the spacing" checks
_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box, lo[i] <= hi[i] per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise GeometryError("box lo/hi dimension mismatch")
        if not lo:
            raise GeometryError("box must have at least one axis")
        if any(h < l for l, h in zip(lo, hi)):
            raise GeometryError(f"box has hi < lo: {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        out = 1.0
        for l, h in zip(self.lo, self.hi):
            out *= h - l
        return out

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def pad(self, margin: float) -> "Box":
        return Box(
            tuple(l - margin for l in self.lo),
            tuple(h + margin for h in self.hi),
        )

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def cube_centered(center, side) -> Box:
    """Axis-aligned cube of the given side length around ``center``."""
    c = np.atleast_1d(np.asarray(center, float))
    return Box(tuple(c - side / 2.0), tuple(c + side / 2.0))


def unit_cube_at(i) -> Box:
    """Half-open-by-convention unit cube centred at the lattice point i.

    Stored as a closed box; membership tests that need the half-open
    convention use :func:`in_unit_cube`.
    """
    return cube_centered(i, 1.0)


def in_unit_cube(pts: np.ndarray, i) -> np.ndarray:
    """Half-open membership: i - 1/2 <= x < i + 1/2 per axis."""
    pts = np.atleast_2d(np.asarray(pts, float))
    c = np.asarray(i, float)
    return np.all((pts >= c - 0.5) & (pts < c + 0.5), axis=1)


def snap_count(length: float, spacing: float) -> int:
    """length/spacing as an exact integer, or GeometryError."""
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    n = length / spacing
    k = round(n)
    if abs(n - k) > _ALIGN_TOL * max(1.0, abs(n)):
        raise GeometryError(
            f"length {length} is not an integer multiple of spacing {spacing}"
        )
    return int(k)


def vertex_shape(window: Box, spacing: float) -> tuple[int, ...]:
    """Vertex counts per axis of the grid with the given spacing."""
    return tuple(snap_count(h - l, spacing) + 1 for l, h in zip(window.lo, window.hi))


def vertex_coordinates(window: Box, spacing: float, axis: int) -> np.ndarray:
    n = vertex_shape(window, spacing)[axis]
    return window.lo[axis] + spacing * np.arange(n)


def vertex_index_of(window: Box, spacing: float, point) -> tuple[int, ...]:
    """Grid index of a point that must sit exactly on a vertex."""
    p = np.atleast_1d(np.asarray(point, float))
    out = []
    for ax in range(len(p)):
        k = (p[ax] - window.lo[ax]) / spacing
        ki = round(k)
        if abs(k - ki) > 1e-6:
            raise GeometryError(f"point {tuple(p)} is not on the vertex grid")
        out.append(int(ki))
    return tuple(out)


def boundary_vertex_mask(shape: tuple[int, ...]) -> np.ndarray:
    """True on vertices lying on the window boundary."""
    mask = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = shape[ax] - 1
        mask[tuple(sl)] = True
    return mask
