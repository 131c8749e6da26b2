import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopfill.classifiers import Affine, Annulus, Ball, LShape, random_mlp
from loopfill.geometry import GreyCalibration, grey_distance
from loopfill.repair import (
    DEFAULT_REPAIR,
    STRONG_REPAIR,
    RepairConfig,
    SingularGradient,
    deepfool_steps,
    repair_vertex,
)


class HardOnly:
    dim = 2
    num_labels = 2
    supports_gradients = False

    def classify(self, x):
        return 0


def test_tier_presets():
    assert (DEFAULT_REPAIR.max_iters, DEFAULT_REPAIR.overshoot, DEFAULT_REPAIR.bisection_steps) == (50, 0.02, 10)
    assert (STRONG_REPAIR.max_iters, STRONG_REPAIR.overshoot, STRONG_REPAIR.bisection_steps) == (200, 0.05, 20)
    assert RepairConfig.from_json(STRONG_REPAIR.to_json()) == STRONG_REPAIR
    with pytest.raises(ValueError):
        RepairConfig(max_iters=0)


def test_on_label_point_is_untouched():
    z = np.array([0.1, 0.2])
    out = repair_vertex(z, 1, Ball(np.zeros(2), 1.0), DEFAULT_REPAIR)
    assert out.success and out.iterations_used == 0 and out.moved_grey == 0.0
    assert np.array_equal(out.repaired, z)


def _halfspace_case(rng, dim=4):
    w = rng.normal(size=dim)
    b = float(rng.normal())
    clf = Affine.halfspace(w, b)
    delta = float(rng.uniform(0.01, 1.0))
    base = rng.normal(size=dim)
    # shift onto w.x + b = -delta
    z = base - ((base @ w + b + delta) / (w @ w)) * w
    return clf, w, b, delta, z


def test_halfspace_repair_closed_form(rng):
    for _ in range(20):
        clf, w, b, delta, z = _halfspace_case(rng)
        out = repair_vertex(z, 1, clf, DEFAULT_REPAIR)
        assert out.success and out.iterations_used == 1
        assert clf.classify(out.repaired) == 1
        bound = (1 + DEFAULT_REPAIR.overshoot) * delta / np.linalg.norm(w)
        assert np.linalg.norm(out.repaired - z) <= bound * (1 + 1e-9)


def test_bisection_never_moves_further_than_overshoot(rng):
    clf = Annulus(np.zeros(2), 1.0, 2.0)
    cal = GreyCalibration(0.5)
    for z in rng.uniform(-0.9, 0.9, size=(50, 2)):
        if np.linalg.norm(z) < 1e-3:
            continue
        cur, _ = deepfool_steps(z, 1, clf, DEFAULT_REPAIR.max_iters)
        over = z + (1 + DEFAULT_REPAIR.overshoot) * (cur - z)
        out = repair_vertex(z, 1, clf, DEFAULT_REPAIR, cal)
        assert out.success
        assert out.moved_grey <= grey_distance(z, over, cal) + 1e-15
        assert clf.classify(out.repaired) == 1


def test_moved_distance_is_in_grey_units():
    clf = Ball(np.zeros(2), 1.0)
    z = np.array([1.5, 0.0])
    plain = repair_vertex(z, 1, clf, DEFAULT_REPAIR)
    scaled = repair_vertex(z, 1, clf, DEFAULT_REPAIR, GreyCalibration(0.25))
    assert scaled.moved_grey == pytest.approx(4 * plain.moved_grey)


def test_singular_gradient_fails_cleanly():
    # the annulus score has zero gradient exactly at its centre
    clf = Annulus(np.zeros(2), 1.0, 2.0)
    with pytest.raises(SingularGradient):
        deepfool_steps(np.zeros(2), 1, clf, 10)
    out = repair_vertex(np.zeros(2), 1, clf, DEFAULT_REPAIR)
    assert not out.success and out.reason.startswith("singular_gradient")


def test_hard_label_only_classifier_cannot_repair():
    out = repair_vertex(np.zeros(2), 1, HardOnly(), DEFAULT_REPAIR)
    assert not out.success and out.reason == "no_gradients"


def test_iteration_budget_exhaustion_reports_not_reached():
    # the annulus score is curved, so one linearised step from the hole falls short (rho 0.5 -> 0.875)
    ring = Annulus(np.zeros(2), 1.0, 2.0)
    cfg = RepairConfig(max_iters=1, overshoot=0.0, bisection_steps=0)
    out = repair_vertex(np.array([0.5, 0.0]), 1, ring, cfg)
    assert not out.success and out.reason == "not_reached"


def test_piecewise_linear_region_repairs_in_one_step():
    out = repair_vertex(np.array([0.5, 0.6]), 1, LShape.standard(2), DEFAULT_REPAIR)
    assert out.success and out.iterations_used == 1
    assert out.repaired[0] < 0


def test_multiclass_network_repair(rng):
    net = random_mlp([3, 12, 3], 4, gain=2.0)
    xs = rng.normal(size=(200, 3))
    labels = net.classify_batch(xs)
    target = int(np.bincount(labels, minlength=3).argmax())
    fixed = 0
    for z in xs[labels != target][:30]:
        out = repair_vertex(z, target, net, STRONG_REPAIR)
        if out.success:
            fixed += 1
            assert net.classify(out.repaired) == target
    assert fixed > 0


@given(st.floats(1.05, 3.0), st.floats(0, 2 * np.pi))
def test_outside_ball_lands_just_inside(r, theta):
    z = r * np.array([np.cos(theta), np.sin(theta)])
    out = repair_vertex(z, 1, Ball(np.zeros(2), 1.0), DEFAULT_REPAIR)
    assert out.success
    assert np.linalg.norm(out.repaired) < 1.0
    assert np.linalg.norm(out.repaired - z) <= (1 + DEFAULT_REPAIR.overshoot) * (r - 1) + 1e-9
