import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopfill.boundary import (
    PARAM_SCALE,
    BoundaryCurve,
    CurveConstructionError,
    LoopPreconditionError,
    LoopSpec,
    build_curve,
    build_loop,
    curve_eval,
    curve_resolution,
    loop_from_polylines,
    straight_samples,
)
from loopfill.classifiers import Annulus, Ball, LShape, UnionOfBalls
from loopfill.geometry import GeometryError, GreyCalibration
from loopfill.repair import DEFAULT_REPAIR, RepairConfig

CAL = GreyCalibration(0.1)
TAU = 0.5


def test_resolution_rule():
    a = np.zeros(2)
    assert curve_resolution(a, a, CAL, TAU) == 2
    # grey length 20 -> 20/2^s <= 0.5 first at s=6
    assert curve_resolution(a, np.array([2.0, 0.0]), CAL, TAU) == 6
    assert curve_resolution(a, np.array([0.2, 0.0]), CAL, TAU) == 2


def test_degenerate_segment():
    p = np.array([0.3, 0.1])
    c = build_curve(p, p, 1, Ball(np.zeros(2), 1.0), CAL, TAU, DEFAULT_REPAIR)
    assert c.num_repairs == 0
    assert np.all(c.vertices == p)
    assert len(c.vertices) == 5


def test_convex_segment_needs_no_repair(rng):
    ball = Ball(np.zeros(3), 1.0)
    for _ in range(10):
        a, b = rng.uniform(-0.5, 0.5, size=(2, 3))
        c = build_curve(a, b, 1, ball, CAL, TAU, DEFAULT_REPAIR)
        assert c.num_repairs == 0
        n = len(c.vertices) - 1
        assert n & (n - 1) == 0


def test_thin_union_segment_gets_repaired():
    union = UnionOfBalls([[-0.95, 0.0], [0.95, 0.0]], [1.0, 1.0])
    a, b = np.array([-1.0, 0.6]), np.array([1.0, 0.6])
    s = curve_resolution(a, b, CAL, TAU)
    scan = straight_samples(a, b, s)
    off = int(np.sum(union.classify_batch(scan) != 1))
    assert off > 0
    c = build_curve(a, b, 1, union, CAL, TAU, DEFAULT_REPAIR)
    assert c.num_repairs == off
    assert np.all(union.classify_batch(c.vertices) == 1)
    assert np.array_equal(c.start, a) and np.array_equal(c.end, b)


def test_curve_failure_carries_parameter():
    # the annulus centre has zero gradient, so that sample cannot move
    ring = Annulus(np.zeros(2), 1.0, 2.0)
    with pytest.raises(CurveConstructionError) as err:
        build_curve(np.array([-1.5, 0.0]), np.array([1.5, 0.0]), 1, ring, GreyCalibration(1.0), TAU,
                    RepairConfig(max_iters=5))
    assert err.value.t == 0.5


def test_dyadic_evaluation_is_exact(rng):
    verts = rng.normal(size=(9, 3))
    c = BoundaryCurve(verts, [k * (PARAM_SCALE // 8) for k in range(9)], 1)
    assert np.array_equal(curve_eval(c, 0.0), verts[0])
    for k in range(9):
        assert np.array_equal(curve_eval(c, k / 8), verts[k])
        assert np.array_equal(c.eval_dyadic(k, 3), verts[k])
    with pytest.raises(GeometryError):
        curve_eval(c, 1.01)


def test_two_vertex_curve_midpoint():
    a, b = np.array([0.0, 2.0]), np.array([4.0, -2.0])
    c = BoundaryCurve(np.stack([a, b]), [0, PARAM_SCALE], 1)
    assert np.allclose(curve_eval(c, 0.5), [2.0, 0.0])


@given(st.floats(0, 1))
def test_vectorised_and_scalar_eval_agree(t):
    rng = np.random.default_rng(1)
    verts = rng.normal(size=(5, 2))
    c = BoundaryCurve(verts, [0, 100, 5000, 40000, PARAM_SCALE], 1)
    assert np.allclose(c.eval_many(np.array([t]))[0], curve_eval(c, t), atol=1e-14)


def test_insert_keeps_existing_vertices():
    c = BoundaryCurve(np.array([[0.0], [1.0]]), [0, PARAM_SCALE], 1)
    c.insert(PARAM_SCALE // 4, np.array([5.0]), True, 3)
    assert c.params == [0, PARAM_SCALE // 4, PARAM_SCALE]
    assert c.num_repairs == 1 and c.repair_iters[1] == 3
    assert np.array_equal(curve_eval(c, 0.25), [5.0])
    with pytest.raises(GeometryError):
        c.insert(PARAM_SCALE // 4, np.array([0.0]), False, 0)


def test_identical_anchors_give_constant_curves():
    p = np.array([0.1, -0.2])
    loop = build_loop([p] * 4, 1, Ball(np.zeros(2), 1.0), CAL, TAU, DEFAULT_REPAIR)
    for c in loop.curves:
        assert np.all(c.vertices == p)


def test_loop_orientation(rng):
    ball = Ball(np.zeros(4), 1.0)
    anchors = list(rng.uniform(-0.4, 0.4, size=(4, 4)))
    loop = build_loop(anchors, 1, ball, CAL, TAU, DEFAULT_REPAIR)
    x00, x10, x01, x11 = anchors
    g0, g1, g2, g3 = loop.curves
    for c, a, b in ((g0, x00, x10), (g1, x10, x11), (g2, x01, x11), (g3, x00, x01)):
        assert np.array_equal(c.start, a) and np.array_equal(c.end, b)
    assert loop.num_repairs == 0


def test_lshape_loop_repairs_the_notch_side():
    L = LShape.standard(2)
    cal = GreyCalibration(0.2)
    x00, x10 = np.array([0.6, -0.5]), np.array([-0.5, -0.5])
    x01, x11 = np.array([0.6, -0.2]), np.array([-0.5, 0.6])
    loop = build_loop([x00, x10, x01, x11], 1, L, cal, TAU, DEFAULT_REPAIR)
    # g2 runs from the lower arm to the upper arm straight through the cut
    scan = straight_samples(x01, x11, curve_resolution(x01, x11, cal, TAU))
    assert np.any(L.classify_batch(scan) != 1)
    assert loop.curves[2].num_repairs >= 1
    for c in loop.curves:
        assert np.all(L.classify_batch(c.vertices) == 1)


def test_off_label_anchor_rejected():
    ball = Ball(np.zeros(2), 1.0)
    with pytest.raises(LoopPreconditionError, match="x01"):
        build_loop([np.zeros(2), np.zeros(2), np.array([3.0, 0.0]), np.zeros(2)], 1, ball, CAL, TAU,
                   DEFAULT_REPAIR)


def test_loop_json_round_trip(rng):
    ball = Ball(np.zeros(2), 1.0)
    loop = build_loop(list(rng.uniform(-0.5, 0.5, size=(4, 2))), 1, ball, CAL, TAU, DEFAULT_REPAIR)
    back = LoopSpec.from_json(loop.to_json())
    for a, b in zip(loop.curves, back.curves):
        assert np.array_equal(a.vertices, b.vertices) and a.params == b.params


def test_polyline_length_checked():
    z = np.zeros(2)
    with pytest.raises(GeometryError):
        loop_from_polylines([z] * 4, [np.zeros((4, 2))] * 4, 1)
