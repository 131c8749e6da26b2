"""Points, grey-RMS calibration, exact dyadic coordinates and bilinear patches.

Points are plain 1-D ``float64`` numpy arrays. Parameter-domain positions are
kept as exact integer triples ``(i, j, level)`` meaning ``(i / 2**level,
j / 2**level)`` and only turned into floats when a patch is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

LEVEL_CAP = 16


class GeometryError(ValueError):
    pass


class InvalidCalibration(GeometryError):
    pass


def as_point(x, dim: int | None = None) -> np.ndarray:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1:
        raise GeometryError(f"point must be 1-D, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise GeometryError("point has non-finite coordinates")
    return p


def _same_dim(*points: np.ndarray) -> None:
    dims = {p.shape for p in points}
    if len(dims) != 1:
        raise GeometryError(f"dimension mismatch: {sorted(d[0] for d in dims)}")


@dataclass(frozen=True)
class GreyCalibration:
    """Normalised-l2 length of one grey-RMS unit."""

    grey_scale: float

    def __post_init__(self):
        if not (math.isfinite(self.grey_scale) and self.grey_scale > 0):
            raise InvalidCalibration(f"grey_scale must be positive and finite, got {self.grey_scale}")

    @classmethod
    def from_image(cls, height: int, width: int, sigmas: Sequence[float]) -> "GreyCalibration":
        return make_grey_calibration(height, width, sigmas)


def make_grey_calibration(height: int, width: int, sigmas: Sequence[float]) -> GreyCalibration:
    """Grey-RMS scale for ``height x width`` images normalised by per-channel ``sigmas``.

    >>> round(make_grey_calibration(1, 1, (1, 1, 1)).grey_scale * 255, 12) == round(math.sqrt(3), 12)
    True
    """
    if int(height) != height or int(width) != width or height <= 0 or width <= 0:
        raise InvalidCalibration(f"image dimensions must be positive integers, got {height}x{width}")
    sigmas = [float(s) for s in sigmas]
    if not sigmas or any(not (math.isfinite(s) and s > 0) for s in sigmas):
        raise InvalidCalibration(f"sigmas must be positive, got {sigmas}")
    total = sum((1.0 / (255.0 * s)) ** 2 for s in sigmas)
    return GreyCalibration(math.sqrt(height * width * total))


def grey_distance(a, b, cal: GreyCalibration) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_dim(a, b)
    return float(np.linalg.norm(a - b)) / cal.grey_scale


def quad_grey_diameter(vertices: Sequence[np.ndarray], cal: GreyCalibration) -> float:
    pts = [np.asarray(v, dtype=np.float64) for v in vertices]
    if len(pts) != 4:
        raise GeometryError("a quad has exactly four vertices")
    _same_dim(*pts)
    best = 0.0
    for k in range(4):
        for l in range(k + 1, 4):
            best = max(best, float(np.linalg.norm(pts[k] - pts[l])))
    return best / cal.grey_scale


def bilinear_eval(z00, z10, z01, z11, u: float, v: float) -> np.ndarray:
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise GeometryError(f"parameters out of [0,1]: ({u}, {v})")
    z00, z10, z01, z11 = (np.asarray(z, dtype=np.float64) for z in (z00, z10, z01, z11))
    _same_dim(z00, z10, z01, z11)
    return (1 - u) * (1 - v) * z00 + u * (1 - v) * z10 + (1 - u) * v * z01 + u * v * z11


def bilinear_grid(z00, z10, z01, z11, m: int) -> np.ndarray:
    """All ``(m+1)**2`` samples ``Q(a/m, b/m)``, ``a`` fastest, shape ``((m+1)**2, n)``.

    Row ``b*(m+1) + a`` holds ``Q(a/m, b/m)``; the arithmetic is the same as
    :func:`bilinear_eval`, so samples agree with it bit for bit.
    """
    t = np.arange(m + 1, dtype=np.float64) / m
    u = np.tile(t, m + 1)[:, None]
    v = np.repeat(t, m + 1)[:, None]
    return (1 - u) * (1 - v) * z00 + u * (1 - v) * z10 + (1 - u) * v * z01 + u * v * z11


def midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Same expression as bilinear_eval at u=1/2 on an edge, so edge samples and midpoints coincide.
    return 0.5 * a + 0.5 * b


@dataclass(frozen=True, order=True)
class DyadicCoord:
    """Grid point ``(i / 2**level, j / 2**level)`` of the unit square."""

    i: int
    j: int
    level: int

    def __post_init__(self):
        if self.level < 0 or self.level > LEVEL_CAP:
            raise GeometryError(f"level {self.level} outside [0, {LEVEL_CAP}]")
        n = 1 << self.level
        if not (0 <= self.i <= n and 0 <= self.j <= n):
            raise GeometryError(f"indices ({self.i}, {self.j}) out of bounds at level {self.level}")

    @property
    def key(self) -> str:
        return f"{self.i}/{self.j}/{self.level}"

    @classmethod
    def from_key(cls, key: str) -> "DyadicCoord":
        i, j, level = (int(part) for part in key.split("/"))
        return cls(i, j, level)

    def uv(self) -> tuple[Fraction, Fraction]:
        n = 1 << self.level
        return Fraction(self.i, n), Fraction(self.j, n)

    def on_boundary(self) -> bool:
        n = 1 << self.level
        return self.i in (0, n) or self.j in (0, n)


def canonicalize(coord: DyadicCoord) -> DyadicCoord:
    i, j, level = coord.i, coord.j, coord.level
    while level > 0 and i % 2 == 0 and j % 2 == 0:
        i //= 2
        j //= 2
        level -= 1
    return DyadicCoord(i, j, level)


def coord(i: int, j: int, level: int) -> DyadicCoord:
    return canonicalize(DyadicCoord(i, j, level))


@dataclass(frozen=True, order=True)
class Quad:
    """Axis-aligned dyadic square with lower-left grid index ``(i, j)`` at ``level``."""

    i: int
    j: int
    level: int

    def __post_init__(self):
        if self.level < 0 or self.level > LEVEL_CAP:
            raise GeometryError(f"level {self.level} outside [0, {LEVEL_CAP}]")
        n = 1 << self.level
        if not (0 <= self.i < n and 0 <= self.j < n):
            raise GeometryError(f"quad origin ({self.i}, {self.j}) out of bounds at level {self.level}")

    @property
    def corners(self) -> tuple[DyadicCoord, DyadicCoord, DyadicCoord, DyadicCoord]:
        """Canonical corners in the order (u0,v0), (u1,v0), (u0,v1), (u1,v1)."""
        i, j, d = self.i, self.j, self.level
        return coord(i, j, d), coord(i + 1, j, d), coord(i, j + 1, d), coord(i + 1, j + 1, d)

    @property
    def area(self) -> Fraction:
        return Fraction(1, 4**self.level)

    def children(self) -> list["Quad"]:
        i, j, d = 2 * self.i, 2 * self.j, self.level + 1
        return [Quad(i, j, d), Quad(i + 1, j, d), Quad(i, j + 1, d), Quad(i + 1, j + 1, d)]

    def new_coords(self) -> list[DyadicCoord]:
        """The five points subdivision adds: bottom, left, right, top midpoints, then centre."""
        i, j, d = 2 * self.i, 2 * self.j, self.level + 1
        return [
            coord(i + 1, j, d),
            coord(i, j + 1, d),
            coord(i + 2, j + 1, d),
            coord(i + 1, j + 2, d),
            coord(i + 1, j + 1, d),
        ]

    def contains(self, other: "Quad") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return (other.i >> shift) == self.i and (other.j >> shift) == self.j


def root_quad() -> Quad:
    return Quad(0, 0, 0)


def iter_points(points: np.ndarray) -> Iterator[np.ndarray]:
    for row in np.atleast_2d(points):
        yield row


def triangle_areas(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Areas of triangles ``(a, b, c)`` in any dimension; inputs have shape ``(..., n)``."""
    e1 = b - a
    e2 = c - a
    g11 = np.einsum("...k,...k->...", e1, e1)
    g22 = np.einsum("...k,...k->...", e2, e2)
    g12 = np.einsum("...k,...k->...", e1, e2)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))
