"""Seeded anchor sampling for suites.

Every loop draws from its own Philox stream keyed by ``(seed, loop index)``,
so the anchors of loop ``k`` do not depend on how many loops or workers a
suite uses.
"""

from __future__ import annotations

import math

import numpy as np

from .boundary import curve_resolution, straight_samples
from .geometry import GreyCalibration


class SamplingError(RuntimeError):
    pass


def loop_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _sector(p: np.ndarray, center: np.ndarray) -> int:
    ang = math.atan2(p[1] - center[1], p[0] - center[0]) % (2 * math.pi)
    return min(int(ang // (math.pi / 2)), 3)


# Sector (counter-clockwise quadrant around the centre) of x00, x10, x01, x11 for a loop that
# winds once around it: x00 -> x10 -> x11 -> x01.
_ENCIRCLE_SECTORS = (0, 1, 3, 2)


def _draw_point(clf, y, lo, hi, rng, budget, accept=None, block=256) -> np.ndarray:
    tried = 0
    while tried < budget:
        cand = rng.uniform(lo, hi, size=(block, len(lo)))
        tried += block
        labels = clf.classify_batch(cand)
        for p, lab in zip(cand, labels):
            if lab == y and (accept is None or accept(p)):
                return p
    raise SamplingError(f"no point with label {y} found in {budget} draws; region too thin for its box")


def needs_boundary_repair(anchors, y: int, clf, cal: GreyCalibration, tau: float) -> bool:
    x00, x10, x01, x11 = anchors
    for a, b in ((x00, x10), (x10, x11), (x01, x11), (x00, x01)):
        pts = straight_samples(a, b, curve_resolution(a, b, cal, tau))
        if np.any(np.asarray(clf.classify_batch(pts[1:-1])) != y):
            return True
    return False


def sample_anchors(clf, y: int, lo, hi, rng: np.random.Generator, *, budget: int = 100_000,
                   encircle=None, require_boundary_repair: bool = False, cal: GreyCalibration | None = None,
                   tau: float = 0.5, max_tries: int = 1000) -> list[np.ndarray]:
    """Four anchors ``(x00, x10, x01, x11)`` drawn uniformly from the box ``[lo, hi]`` with label ``y``.

    ``encircle`` (a 2-D centre) places the anchors in successive quadrants of
    the first two coordinates so the loop winds around that centre.
    ``require_boundary_repair`` rejects quadruples whose straight sides never
    leave the region at the boundary-curve resolution.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise SamplingError("sampling box needs lo < hi in every coordinate")
    if require_boundary_repair and cal is None:
        raise SamplingError("require_boundary_repair needs a calibration")
    center = None if encircle is None else np.asarray(encircle, dtype=np.float64)
    for _ in range(max_tries):
        anchors = []
        for k in range(4):
            accept = None
            if center is not None:
                want = _ENCIRCLE_SECTORS[k]
                accept = lambda p, want=want: _sector(p, center) == want
            anchors.append(_draw_point(clf, y, lo, hi, rng, budget, accept))
        if not require_boundary_repair or needs_boundary_repair(anchors, y, clf, cal, tau):
            return anchors
    raise SamplingError(f"no anchor quadruple forced a boundary repair in {max_tries} tries")
