import math
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopfill.geometry import (
    DyadicCoord,
    GeometryError,
    GreyCalibration,
    InvalidCalibration,
    Quad,
    bilinear_eval,
    bilinear_grid,
    canonicalize,
    coord,
    grey_distance,
    make_grey_calibration,
    midpoint,
    quad_grey_diameter,
    root_quad,
    triangle_areas,
)

# sqrt(224*224*sum((1/(255*s))**2)) for the usual ImageNet sigmas, evaluated by hand.
IMAGENET_GREY = 6.733162568383386

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_grey_scale_identity_image():
    cal = make_grey_calibration(1, 1, (1, 1, 1))
    assert cal.grey_scale == pytest.approx(math.sqrt(3) / 255, rel=1e-15)
    assert cal.grey_scale == pytest.approx(0.0067924, abs=1e-7)


def test_grey_scale_grows_with_image_side():
    a = make_grey_calibration(1, 1, (1, 1, 1)).grey_scale
    b = make_grey_calibration(2, 2, (1, 1, 1)).grey_scale
    assert b == pytest.approx(2 * a, rel=1e-15)


def test_grey_scale_imagenet_sigmas():
    cal = GreyCalibration.from_image(224, 224, (0.229, 0.224, 0.225))
    assert cal.grey_scale == pytest.approx(IMAGENET_GREY, rel=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_bad_grey_scale_rejected(bad):
    with pytest.raises(InvalidCalibration):
        GreyCalibration(bad)


@pytest.mark.parametrize("h,w,sig", [(0, 1, (1,)), (1, 1, ()), (1, 1, (0.0,)), (1.5, 1, (1,))])
def test_bad_image_calibration_rejected(h, w, sig):
    with pytest.raises(InvalidCalibration):
        make_grey_calibration(h, w, sig)


def test_grey_distance_examples():
    cal = GreyCalibration(5.0)
    assert grey_distance([0, 0], [3, 4], cal) == 1.0
    assert grey_distance([1.5, 2], [1.5, 2], cal) == 0.0
    with pytest.raises(GeometryError):
        grey_distance([0, 0], [0, 0, 0], cal)


@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3),
       st.floats(0.01, 100))
def test_grey_distance_homogeneous(a, b, lam):
    cal = GreyCalibration(0.7)
    d = grey_distance(np.array(a) * lam, np.array(b) * lam, cal)
    assert d == pytest.approx(lam * grey_distance(a, b, cal), rel=1e-9, abs=1e-9)


def test_quad_diameter():
    cal = GreyCalibration(1.0)
    sq = [np.array(p, float) for p in ((0, 0), (1, 0), (0, 1), (1, 1))]
    assert quad_grey_diameter(sq, cal) == pytest.approx(math.sqrt(2))
    assert quad_grey_diameter([sq[0]] * 4, cal) == 0.0
    for perm in permutations(sq):
        assert quad_grey_diameter(list(perm), cal) == quad_grey_diameter(sq, cal)
    with pytest.raises(GeometryError):
        quad_grey_diameter(sq[:3], cal)


def test_bilinear_corners_and_centre(rng):
    z = rng.normal(size=(4, 5))
    assert np.array_equal(bilinear_eval(*z, 0.0, 0.0), z[0])
    assert np.array_equal(bilinear_eval(*z, 1.0, 0.0), z[1])
    assert np.array_equal(bilinear_eval(*z, 0.0, 1.0), z[2])
    assert np.array_equal(bilinear_eval(*z, 1.0, 1.0), z[3])
    assert np.allclose(bilinear_eval(*z, 0.5, 0.5), z.mean(axis=0), atol=1e-15)
    with pytest.raises(GeometryError):
        bilinear_eval(*z, 1.5, 0.0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_constant_patch(u, v):
    p = np.array([0.3, -2.0, 7.0])
    assert np.allclose(bilinear_eval(p, p, p, p, u, v), p, rtol=1e-15)


def test_grid_matches_pointwise_evaluation(rng):
    z = rng.normal(size=(4, 3))
    m = 8
    grid = bilinear_grid(*z, m)
    for b in range(m + 1):
        for a in range(m + 1):
            assert np.array_equal(grid[b * (m + 1) + a], bilinear_eval(*z, a / m, b / m))


def test_midpoint_matches_edge_sample(rng):
    a, b = rng.normal(size=(2, 4))
    assert np.array_equal(midpoint(a, b), bilinear_eval(a, b, a, b, 0.5, 0.0))


@pytest.mark.parametrize("raw,canon", [((2, 2, 2), (1, 1, 1)), ((1, 2, 2), (1, 2, 2)), ((0, 0, 3), (0, 0, 0)),
                                       ((4, 8, 3), (1, 2, 1))])
def test_canonical_form(raw, canon):
    assert canonicalize(DyadicCoord(*raw)) == DyadicCoord(*canon)
    assert coord(*raw).key == "/".join(map(str, canon))


def test_coord_validation():
    with pytest.raises(GeometryError):
        DyadicCoord(5, 0, 2)
    with pytest.raises(GeometryError):
        DyadicCoord(0, 0, 17)


@given(st.integers(0, 10), st.data())
def test_canonical_coords_denote_same_point(level, data):
    i = data.draw(st.integers(0, 1 << level))
    j = data.draw(st.integers(0, 1 << level))
    c = coord(i, j, level)
    assert c.uv() == (Fraction(i, 1 << level), Fraction(j, 1 << level))
    assert DyadicCoord.from_key(c.key) == c
    assert coord(2 * i, 2 * j, level + 1) == c


def test_quad_children_tile_parent():
    q = Quad(1, 2, 2)
    kids = q.children()
    assert sum(k.area for k in kids) == q.area == Fraction(1, 16)
    assert all(q.contains(k) for k in kids)
    corners = {c for k in kids for c in k.corners}
    assert set(q.new_coords()) | set(q.corners) == corners
    assert len(q.new_coords()) == 5


def test_root_quad_corners():
    z00, z10, z01, z11 = root_quad().corners
    assert (z00.key, z10.key, z01.key, z11.key) == ("0/0/0", "1/0/0", "0/1/0", "1/1/0")


def test_triangle_area_any_dimension():
    a = np.zeros((1, 6))
    b = np.zeros((1, 6))
    c = np.zeros((1, 6))
    b[0, 2] = 3.0
    c[0, 5] = 4.0
    assert triangle_areas(a, b, c)[0] == pytest.approx(6.0)
