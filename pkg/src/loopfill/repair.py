"""Targeted DeepFool-style projection of off-label points into a decision region."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import GreyCalibration, grey_distance


@dataclass(frozen=True)
class RepairConfig:
    max_iters: int = 50
    overshoot: float = 0.02
    bisection_steps: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.overshoot < 0 or self.bisection_steps < 0:
            raise ValueError("overshoot and bisection_steps must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "RepairConfig":
        return cls(**doc)


DEFAULT_REPAIR = RepairConfig(50, 0.02, 10)
STRONG_REPAIR = RepairConfig(200, 0.05, 20)


@dataclass
class RepairOutcome:
    repaired: np.ndarray
    iterations_used: int
    moved_grey: float
    success: bool
    reason: str | None = None


class SingularGradient(ArithmeticError):
    pass


class NumericFailure(ArithmeticError):
    pass


def _activation_margin(g: float) -> float:
    return 1e-6 * (1.0 + abs(g))


def deepfool_steps(z: np.ndarray, y: int, clf, max_iters: int) -> tuple[np.ndarray, int]:
    """Linearised steps toward label ``y`` against the current top class.

    Returns the last iterate and the number of steps taken. Raises
    :class:`SingularGradient` or :class:`NumericFailure`.
    """
    current = np.array(z, dtype=np.float64)
    iters = 0
    while iters < max_iters:
        logits = clf.logits(current)
        if not np.all(np.isfinite(logits)):
            raise NumericFailure("non-finite logits")
        k = int(np.argmax(logits))
        if k == y:
            break
        w = clf.logit_gradient(current, y) - clf.logit_gradient(current, k)
        wn2 = float(w @ w)
        if not np.isfinite(wn2):
            raise NumericFailure("non-finite gradient")
        if wn2 < 1e-24:
            raise SingularGradient(f"gradient difference vanishes at iteration {iters}")
        g = float(logits[k] - logits[y])
        current = current + ((g + _activation_margin(g)) / wn2) * w
        iters += 1
    return current, iters


def repair_vertex(z, y: int, clf, cfg: RepairConfig, cal: GreyCalibration | None = None) -> RepairOutcome:
    """Move ``z`` into the region of label ``y``.

    Steps are accumulated, then scaled by ``1 + overshoot`` about ``z``; a
    bisection over the segment from ``z`` to the overshot point then keeps the
    smallest on-label fraction found. ``moved_grey`` is in grey-RMS units when
    ``cal`` is given, otherwise plain l2.
    """
    z = np.asarray(z, dtype=np.float64)
    cal = cal or GreyCalibration(1.0)
    if clf.classify(z) == y:
        return RepairOutcome(z, 0, 0.0, True)
    if not getattr(clf, "supports_gradients", True):
        return RepairOutcome(z, 0, 0.0, False, "no_gradients")
    try:
        current, iters = deepfool_steps(z, y, clf, cfg.max_iters)
    except SingularGradient as exc:
        return RepairOutcome(z, 0, 0.0, False, f"singular_gradient: {exc}")
    except NumericFailure as exc:
        return RepairOutcome(z, 0, 0.0, False, f"numeric: {exc}")
    direction = (1.0 + cfg.overshoot) * (current - z)
    target = z + direction
    if clf.classify(target) != y:
        return RepairOutcome(target, iters, grey_distance(z, target, cal), False, "not_reached")
    lo, hi = 0.0, 1.0
    for _ in range(cfg.bisection_steps):
        mid = 0.5 * (lo + hi)
        if clf.classify(z + mid * direction) == y:
            hi = mid
        else:
            lo = mid
    out = target if hi == 1.0 else z + hi * direction
    return RepairOutcome(out, iters, grey_distance(z, out, cal), True)
