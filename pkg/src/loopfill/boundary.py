"""Label-preserving polygonal boundary curves and the four-sided loop they form."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .geometry import LEVEL_CAP, GeometryError, GreyCalibration, as_point, grey_distance
from .repair import RepairConfig, repair_vertex

PARAM_SCALE = 1 << LEVEL_CAP


class CurveConstructionError(RuntimeError):
    def __init__(self, t: float, reason: str | None = None):
        super().__init__(f"boundary vertex at t={t} could not be repaired ({reason})")
        self.t = t
        self.reason = reason


class LoopPreconditionError(ValueError):
    pass


@dataclass
class BoundaryCurve:
    """Polyline through ``vertices`` at parameters ``params / 2**LEVEL_CAP``.

    Freshly built curves carry ``2**s + 1`` uniformly spaced vertices; the
    fill engine may later insert repaired vertices at finer dyadic parameters.
    """

    vertices: np.ndarray
    params: list[int]
    label: int
    repaired: list[bool] = field(default_factory=list)
    repair_iters: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.array(self.vertices, dtype=np.float64, ndmin=2)
        if len(self.params) != len(self.vertices) or len(self.params) < 2:
            raise GeometryError("curve needs matching params and at least two vertices")
        if self.params[0] != 0 or self.params[-1] != PARAM_SCALE:
            raise GeometryError("curve parameters must span [0, 1]")
        if not self.repaired:
            self.repaired = [False] * len(self.params)
        if not self.repair_iters:
            self.repair_iters = [0] * len(self.params)
        self._pf = np.asarray(self.params, dtype=np.float64) / PARAM_SCALE

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    @property
    def num_repairs(self) -> int:
        return sum(self.repaired)

    def eval(self, t) -> np.ndarray:
        return curve_eval(self, t)

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        idx = np.clip(np.searchsorted(self._pf, ts, side="right") - 1, 0, len(self._pf) - 2)
        left = self._pf[idx]
        f = ((ts - left) / (self._pf[idx + 1] - left))[:, None]
        return (1 - f) * self.vertices[idx] + f * self.vertices[idx + 1]

    def eval_dyadic(self, k: int, level: int) -> np.ndarray:
        return self.eval_param(k << (LEVEL_CAP - level))

    def eval_param(self, p: int) -> np.ndarray:
        pos = bisect.bisect_left(self.params, p)
        if pos < len(self.params) and self.params[pos] == p:
            return self.vertices[pos]
        return self.eval_many(np.array([p / PARAM_SCALE]))[0]

    def has_param(self, p: int) -> bool:
        pos = bisect.bisect_left(self.params, p)
        return pos < len(self.params) and self.params[pos] == p

    def insert(self, p: int, point: np.ndarray, repaired: bool, iters: int) -> None:
        pos = bisect.bisect_left(self.params, p)
        if pos < len(self.params) and self.params[pos] == p:
            raise GeometryError(f"curve already has a vertex at parameter {p}/{PARAM_SCALE}")
        self.params.insert(pos, p)
        self.vertices = np.insert(self.vertices, pos, point, axis=0)
        self.repaired.insert(pos, repaired)
        self.repair_iters.insert(pos, iters)
        self._pf = np.asarray(self.params, dtype=np.float64) / PARAM_SCALE

    def copy(self) -> "BoundaryCurve":
        return BoundaryCurve(self.vertices.copy(), list(self.params), self.label,
                             list(self.repaired), list(self.repair_iters))

    def to_json(self) -> dict:
        return {
            "params": list(self.params),
            "vertices": self.vertices.tolist(),
            "repaired": list(self.repaired),
            "repair_iters": list(self.repair_iters),
        }

    @classmethod
    def from_json(cls, doc: dict, label: int) -> "BoundaryCurve":
        return cls(np.asarray(doc["vertices"], dtype=np.float64), [int(p) for p in doc["params"]], label,
                   [bool(r) for r in doc.get("repaired", [])], [int(r) for r in doc.get("repair_iters", [])])


def curve_eval(curve: BoundaryCurve, t: float) -> np.ndarray:
    if not (0.0 <= t <= 1.0):
        raise GeometryError(f"curve parameter {t} outside [0, 1]")
    scaled = t * PARAM_SCALE
    if scaled == int(scaled):
        return curve.eval_param(int(scaled))
    return curve.eval_many(np.array([float(t)]))[0]


def curve_resolution(a: np.ndarray, b: np.ndarray, cal: GreyCalibration, tau: float) -> int:
    d = grey_distance(a, b, cal)
    s = 2
    while d / (1 << s) > tau:
        s += 1
        if s > LEVEL_CAP:
            raise GeometryError(f"segment of grey length {d} needs more than 2**{LEVEL_CAP} pieces at tau={tau}")
    return s


def straight_samples(a: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    t = (np.arange((1 << s) + 1, dtype=np.float64) / (1 << s))[:, None]
    return (1 - t) * a + t * b


def build_curve(a, b, y: int, clf, cal: GreyCalibration, tau: float, repair_cfg: RepairConfig) -> BoundaryCurve:
    a = as_point(a)
    b = as_point(b, a.shape[0])
    s = curve_resolution(a, b, cal, tau)
    pts = straight_samples(a, b, s)
    labels = clf.classify_batch(pts)
    n = len(pts)
    repaired = [False] * n
    iters = [0] * n
    for k in range(1, n - 1):
        if labels[k] == y:
            continue
        out = repair_vertex(pts[k], y, clf, repair_cfg, cal)
        if not out.success:
            raise CurveConstructionError(k / (n - 1), out.reason)
        pts[k] = out.repaired
        repaired[k] = True
        iters[k] = out.iterations_used
    step = PARAM_SCALE >> s
    return BoundaryCurve(pts, [k * step for k in range(n)], y, repaired, iters)


@dataclass
class LoopSpec:
    """Anchors and the curves g0: x00->x10, g1: x10->x11, g2: x01->x11, g3: x00->x01."""

    x00: np.ndarray
    x10: np.ndarray
    x01: np.ndarray
    x11: np.ndarray
    curves: tuple[BoundaryCurve, BoundaryCurve, BoundaryCurve, BoundaryCurve]
    label: int

    @property
    def anchors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.x00, self.x10, self.x01, self.x11

    @property
    def dim(self) -> int:
        return self.x00.shape[0]

    @property
    def num_repairs(self) -> int:
        return sum(c.num_repairs for c in self.curves)

    def copy(self) -> "LoopSpec":
        return LoopSpec(self.x00, self.x10, self.x01, self.x11, tuple(c.copy() for c in self.curves), self.label)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "anchors": [p.tolist() for p in self.anchors],
            "curves": [c.to_json() for c in self.curves],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LoopSpec":
        y = int(doc["label"])
        x00, x10, x01, x11 = (np.asarray(p, dtype=np.float64) for p in doc["anchors"])
        curves = tuple(BoundaryCurve.from_json(c, y) for c in doc["curves"])
        return cls(x00, x10, x01, x11, curves, y)


def build_loop(anchors, y: int, clf, cal: GreyCalibration, tau: float, repair_cfg: RepairConfig) -> LoopSpec:
    """Anchors in the order ``(x00, x10, x01, x11)``."""
    x00, x10, x01, x11 = (as_point(p) for p in anchors)
    dim = x00.shape[0]
    for name, p in zip(("x00", "x10", "x01", "x11"), (x00, x10, x01, x11)):
        as_point(p, dim)
        got = clf.classify(p)
        if got != y:
            raise LoopPreconditionError(f"anchor {name} has label {got}, expected {y}")
    g0 = build_curve(x00, x10, y, clf, cal, tau, repair_cfg)
    g1 = build_curve(x10, x11, y, clf, cal, tau, repair_cfg)
    g2 = build_curve(x01, x11, y, clf, cal, tau, repair_cfg)
    g3 = build_curve(x00, x01, y, clf, cal, tau, repair_cfg)
    return LoopSpec(x00, x10, x01, x11, (g0, g1, g2, g3), y)


def loop_from_polylines(anchors, curves_vertices, y: int) -> LoopSpec:
    """Loop from explicit uniform polylines (each of length 2**s + 1), no classifier involved."""
    curves = []
    for verts in curves_vertices:
        verts = np.asarray(verts, dtype=np.float64)
        n = len(verts) - 1
        if n < 1 or n & (n - 1):
            raise GeometryError("polyline length must be a power of two plus one")
        step = PARAM_SCALE // n
        curves.append(BoundaryCurve(verts, [k * step for k in range(n + 1)], y))
    x00, x10, x01, x11 = (np.asarray(p, dtype=np.float64) for p in anchors)
    return LoopSpec(x00, x10, x01, x11, tuple(curves), y)
