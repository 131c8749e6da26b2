import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopfill.boundary import build_loop, loop_from_polylines, straight_samples
from loopfill.classifiers import Constant, UnionOfBalls
from loopfill.coons import CoonsPatch, DegenerateLoop, area_ratio, coons_area, coons_eval, mesh_area
from loopfill.filling import (
    GRID_CHECK,
    AcceptedQuad,
    FillConfig,
    SurfaceMesh,
    VertexRecord,
    VertexStore,
    fill,
)
from loopfill.geometry import GeometryError, GreyCalibration, Quad, bilinear_eval
from loopfill.repair import DEFAULT_REPAIR

# Frozen independently: adaptive double quadrature of sqrt(1 + u^2 + v^2) over the unit
# square, i.e. the area of the bilinear surface (u, v, uv) through the corners below.
TWISTED_AREA = 1.280789275273404
TWISTED = [np.array(p, dtype=float) for p in ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 1))]
# Golden value of the one-quad mesh split on the (00,11) diagonal: two triangles of area sqrt(2)/2.
TWISTED_MESH_AREA = 1.4142135623730951


def straight_loop(corners, s=0):
    x00, x10, x01, x11 = corners
    curves = [straight_samples(a, b, s) for a, b in ((x00, x10), (x10, x11), (x01, x11), (x00, x01))]
    return loop_from_polylines(corners, curves, 1)


def mesh_from_quads(corners, quads, loop=None):
    """Mesh whose vertices lie on the bilinear patch of ``corners`` (all grid-accepted)."""
    store = VertexStore()
    for q in quads:
        for c in q.corners:
            if c not in store:
                u, v = (float(t) for t in c.uv())
                store.insert(c, VertexRecord(bilinear_eval(*corners, u, v), True))
    acc = [AcceptedQuad(q, GRID_CHECK, 2) for q in quads]
    return SurfaceMesh(acc, store, loop or straight_loop(corners), FillConfig(), True)


def repaired_loop():
    union = UnionOfBalls([[-0.95, 0.0], [0.95, 0.0]], [1.0, 1.0])
    anchors = [np.array(p) for p in ((-1.0, -0.6), (1.0, -0.6), (-1.0, 0.6), (1.0, 0.6))]
    loop = build_loop(anchors, 1, union, GreyCalibration(0.1), 0.5, DEFAULT_REPAIR)
    assert loop.num_repairs > 0
    return loop


def test_corner_identities():
    patch = CoonsPatch(repaired_loop())
    x00, x10, x01, x11 = patch.loop.anchors
    assert np.allclose(coons_eval(patch, 0, 0), x00, atol=1e-15)
    assert np.allclose(coons_eval(patch, 1, 0), x10, atol=1e-15)
    assert np.allclose(coons_eval(patch, 0, 1), x01, atol=1e-15)
    assert np.allclose(coons_eval(patch, 1, 1), x11, atol=1e-15)
    with pytest.raises(GeometryError):
        coons_eval(patch, -0.1, 0.5)


def test_boundary_reproduction(rng):
    patch = CoonsPatch(repaired_loop())
    g0, g1, g2, g3 = patch.loop.curves
    t = rng.uniform(0, 1, 100)
    zeros, ones = np.zeros(1), np.ones(1)
    worst = max(
        np.abs(patch.grid(t, zeros)[0] - g0.eval_many(t)).max(),
        np.abs(patch.grid(t, ones)[0] - g2.eval_many(t)).max(),
        np.abs(patch.grid(zeros, t)[:, 0] - g3.eval_many(t)).max(),
        np.abs(patch.grid(ones, t)[:, 0] - g1.eval_many(t)).max(),
    )
    assert worst <= 1e-12


@given(st.floats(0, 1), st.floats(0, 1))
def test_straight_boundaries_give_bilinear_patch(u, v):
    rng = np.random.default_rng(3)
    corners = list(rng.normal(size=(4, 5)))
    patch = CoonsPatch(straight_loop(corners, s=3))
    assert np.abs(coons_eval(patch, u, v) - bilinear_eval(*corners, u, v)).max() <= 1e-12


@pytest.mark.parametrize("K", [1, 7, 64, 128])
def test_flat_unit_square_area(K):
    sq = [np.array(p, float) for p in ((0, 0), (1, 0), (0, 1), (1, 1))]
    assert abs(coons_area(CoonsPatch(straight_loop(sq)), K) - 1.0) <= 1e-12


def test_degenerate_loop_area():
    p = np.array([0.5, 0.5, 0.5])
    loop = straight_loop([p] * 4)
    assert coons_area(CoonsPatch(loop)) == 0.0
    with pytest.raises(DegenerateLoop):
        area_ratio(mesh_from_quads([p] * 4, [Quad(0, 0, 0)], loop))


def test_twisted_quad_quadrature():
    patch = CoonsPatch(straight_loop(TWISTED))
    a64 = coons_area(patch, 64)
    a1024 = coons_area(patch, 1024)
    assert abs(a64 - a1024) / a1024 <= 1e-3
    assert abs(a1024 - TWISTED_AREA) / TWISTED_AREA <= 1e-6


def test_mesh_area_single_quad_golden():
    mesh = mesh_from_quads(TWISTED, [Quad(0, 0, 0)])
    assert mesh_area(mesh) == pytest.approx(TWISTED_MESH_AREA, rel=1e-15)
    # the other diagonal would give 1/2 + sqrt(3)/2
    assert abs(mesh_area(mesh) - (0.5 + math.sqrt(3) / 2)) > 0.04


def test_flat_mesh_area_resolution_independent():
    sq = [np.array(p, float) for p in ((0, 0), (2, 0), (0, 1), (2, 1))]
    root = mesh_from_quads(sq, [Quad(0, 0, 0)])
    two = mesh_from_quads(sq, [Quad(1, 0, 1), Quad(0, 1, 1), Quad(1, 1, 1),
                               Quad(0, 0, 2), Quad(1, 0, 2), Quad(0, 1, 2), Quad(1, 1, 2)])
    for m in (root, two):
        assert mesh_area(m) == pytest.approx(2.0, abs=1e-12)
        assert mesh_area(m, 128) == pytest.approx(2.0, abs=1e-12)
        assert area_ratio(m) == pytest.approx(1.0, abs=1e-12)


def test_root_accepted_straight_loop_ratio_is_one(rng):
    corners = list(rng.normal(size=(4, 8)))
    mesh = fill(straight_loop(corners, s=2), Constant(8, 1), GreyCalibration(1.0), FillConfig())
    assert mesh.num_quads == 1
    assert abs(area_ratio(mesh) - 1.0) <= 1e-9
    # two-triangle mesh against a fine Coons grid differs for a non-planar quad
    assert abs(area_ratio(mesh, matched=False) - 1.0) > 1e-6


def test_refined_non_planar_mesh_matches_coons():
    quads = [Quad(i, j, 3) for j in range(8) for i in range(8)]
    mesh = mesh_from_quads(TWISTED, quads)
    assert abs(area_ratio(mesh) - 1.0) <= 1e-9


def test_mesh_area_rejects_odd_resolution():
    with pytest.raises(ValueError):
        mesh_area(mesh_from_quads(TWISTED, [Quad(0, 0, 0)]), 3)
