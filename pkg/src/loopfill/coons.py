"""Coons reference patch of a loop, triangulated areas, and the area ratio.

Cells of every regular grid are split along the ``(z00, z11)`` diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import LoopSpec
from .geometry import GeometryError, triangle_areas

DEFAULT_RESOLUTION = 128


class DegenerateLoop(ValueError):
    pass


@dataclass
class CoonsPatch:
    loop: LoopSpec

    def __call__(self, u: float, v: float) -> np.ndarray:
        return coons_eval(self, u, v)

    def grid(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Patch values on the tensor grid, shape ``(len(vs), len(us), n)``."""
        g0, g1, g2, g3 = self.loop.curves
        x00, x10, x01, x11 = self.loop.anchors
        us = np.asarray(us, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        bottom = g0.eval_many(us)[None, :, :]
        top = g2.eval_many(us)[None, :, :]
        left = g3.eval_many(vs)[:, None, :]
        right = g1.eval_many(vs)[:, None, :]
        u = us[None, :, None]
        v = vs[:, None, None]
        corner = (1 - u) * (1 - v) * x00 + u * (1 - v) * x10 + (1 - u) * v * x01 + u * v * x11
        return (1 - v) * bottom + v * top + (1 - u) * left + u * right - corner


def coons_eval(patch: CoonsPatch, u: float, v: float) -> np.ndarray:
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise GeometryError(f"parameters out of [0,1]: ({u}, {v})")
    return patch.grid(np.array([u]), np.array([v]))[0, 0]


def grid_area(points: np.ndarray) -> float:
    """Triangulated area of a ``(rows, cols, n)`` grid of surface samples."""
    p00 = points[:-1, :-1]
    p10 = points[:-1, 1:]
    p01 = points[1:, :-1]
    p11 = points[1:, 1:]
    return float(triangle_areas(p00, p10, p11).sum() + triangle_areas(p00, p11, p01).sum())


def coons_area(patch: CoonsPatch, resolution: int = DEFAULT_RESOLUTION) -> float:
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    t = np.arange(resolution + 1, dtype=np.float64) / resolution
    return grid_area(patch.grid(t, t))


def _quad_corner_arrays(mesh):
    z = [[], [], [], []]
    for aq in mesh.accepted:
        for slot, c in enumerate(aq.quad.corners):
            try:
                z[slot].append(mesh.vertices[c].point)
            except KeyError:
                raise GeometryError(f"mesh integrity: vertex {c.key} missing") from None
    return [np.array(col) for col in z]


def mesh_area(mesh, resolution: int = 1) -> float:
    """Sum of triangle areas over the accepted quads.

    With the default ``resolution=1`` each quad contributes its two corner
    triangles. A larger power-of-two ``resolution`` subsamples a level-``d``
    quad's bilinear patch on ``max(1, resolution >> d)`` cells per side so the
    mesh is triangulated on the same parameter grid as :func:`coons_area`.
    """
    if not mesh.accepted:
        return 0.0
    if resolution < 1 or resolution & (resolution - 1):
        raise ValueError("resolution must be a positive power of two")
    z00, z10, z01, z11 = _quad_corner_arrays(mesh)
    levels = np.array([aq.quad.level for aq in mesh.accepted])
    total = 0.0
    for level in np.unique(levels):
        sel = levels == level
        cells = max(1, resolution >> int(level))
        if cells == 1:
            a, b, c, d = z00[sel], z10[sel], z01[sel], z11[sel]
            total += float(triangle_areas(a, b, d).sum() + triangle_areas(a, d, c).sum())
            continue
        t = np.arange(cells + 1, dtype=np.float64) / cells
        u = t[None, None, :, None]
        v = t[None, :, None, None]
        a, b, c, d = (z[sel][:, None, None, :] for z in (z00, z10, z01, z11))
        pts = (1 - u) * (1 - v) * a + u * (1 - v) * b + (1 - u) * v * c + u * v * d
        p00, p10, p01, p11 = pts[:, :-1, :-1], pts[:, :-1, 1:], pts[:, 1:, :-1], pts[:, 1:, 1:]
        total += float(triangle_areas(p00, p10, p11).sum() + triangle_areas(p00, p11, p01).sum())
    return total


def area_ratio(mesh, patch: CoonsPatch | None = None, resolution: int = DEFAULT_RESOLUTION,
               matched: bool = True) -> float:
    """Constructed-surface area over Coons area.

    ``matched`` triangulates the mesh on the same parameter grid as the Coons
    patch (see :func:`mesh_area`); otherwise each quad is two triangles.
    """
    patch = patch or CoonsPatch(mesh.loop)
    a_coons = coons_area(patch, resolution)
    if not a_coons > 0:
        raise DegenerateLoop("Coons patch has zero area")
    a_ours = mesh_area(mesh, resolution if matched else 1)
    return a_ours / a_coons
