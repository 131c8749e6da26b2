"""Level-by-level adaptive quad-mesh filling of a boundary loop.

The surface lives on the unit parameter square. Every grid point is keyed by
its canonical :class:`DyadicCoord` in a shared :class:`VertexStore`, so quads
that share an edge point resolve it to the identical vector. Boundary grid
points are pinned to the loop's curves; when one has to be repaired the
repaired point is inserted into the working copy of that curve, so the pinned
relation still holds for the loop stored on the returned mesh.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .boundary import PARAM_SCALE, CurveConstructionError, LoopPreconditionError, LoopSpec, build_loop
from .geometry import (
    LEVEL_CAP,
    DyadicCoord,
    GreyCalibration,
    Quad,
    bilinear_grid,
    midpoint,
    quad_grey_diameter,
    root_quad,
)
from .repair import DEFAULT_REPAIR, RepairConfig, repair_vertex

GRID_CHECK = "grid_check"
SIZE_THRESHOLD = "size_threshold"
ROOT_GRID_CHECK = "root_grid_check"
MECHANISMS = (ROOT_GRID_CHECK, GRID_CHECK, SIZE_THRESHOLD)

VERTEX_REPAIR_FAILED = "vertex_repair_failed"
MAX_DEPTH_EXCEEDED = "max_depth_exceeded"

# Points per classify_batch call; a quad's sample grid is never split across calls.
BATCH_POINTS = 1 << 16


@dataclass(frozen=True)
class FillConfig:
    tau: float = 0.5
    m_min: int = 2
    max_depth: int = 12
    repair: RepairConfig = DEFAULT_REPAIR
    retry_repair: RepairConfig | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.m_min < 1:
            raise ValueError("m_min must be >= 1")
        if not (1 <= self.max_depth <= LEVEL_CAP):
            raise ValueError(f"max_depth must lie in 1..{LEVEL_CAP}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["retry_repair"] = self.retry_repair.to_json() if self.retry_repair else None
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "FillConfig":
        doc = dict(doc)
        if "repair" in doc:
            doc["repair"] = RepairConfig.from_json(doc["repair"])
        if doc.get("retry_repair") is not None:
            doc["retry_repair"] = RepairConfig.from_json(doc["retry_repair"])
        return cls(**doc)


@dataclass
class VertexRecord:
    point: np.ndarray
    verified: bool
    was_repaired: bool = False
    repair_iters: int = 0


class VertexStore:
    """Canonical coordinate -> vertex, first writer wins, insertion ordered."""

    def __init__(self):
        self._data: dict[DyadicCoord, VertexRecord] = {}

    def __contains__(self, c: DyadicCoord) -> bool:
        return c in self._data

    def __getitem__(self, c: DyadicCoord) -> VertexRecord:
        return self._data[c]

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def items(self):
        return self._data.items()

    def insert(self, c: DyadicCoord, rec: VertexRecord) -> VertexRecord:
        if c in self._data:
            raise KeyError(f"vertex {c.key} already stored")
        self._data[c] = rec
        return rec

    def point(self, c: DyadicCoord) -> np.ndarray:
        return self._data[c].point


@dataclass(frozen=True)
class AcceptedQuad:
    quad: Quad
    mechanism: str
    grid_m: int | None = None

    @property
    def level(self) -> int:
        return self.quad.level


@dataclass
class FillStats:
    grid_seconds: float = 0.0
    subdivision_seconds: float = 0.0
    repair_seconds: float = 0.0
    boundary_seconds: float = 0.0
    total_seconds: float = 0.0
    grid_evaluations: int = 0
    repair_iters: list[int] = field(default_factory=list)
    loop_repair_iters: list[int] = field(default_factory=list)
    repair_failures: int = 0
    boundary_refinements: int = 0
    levels_processed: int = 0


@dataclass
class SurfaceMesh:
    accepted: list[AcceptedQuad]
    vertices: VertexStore
    loop: LoopSpec | None
    config: FillConfig
    success: bool
    failure_reason: str | None = None
    tier: str = "default"
    tier_outcomes: dict = field(default_factory=dict)
    stats: FillStats = field(default_factory=FillStats)

    @property
    def max_level(self) -> int:
        return max((aq.level for aq in self.accepted), default=0)

    @property
    def num_quads(self) -> int:
        return len(self.accepted)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def corner_points(self, q: Quad) -> list[np.ndarray]:
        return [self.vertices.point(c) for c in q.corners]

    def covered_area(self) -> Fraction:
        return sum((aq.quad.area for aq in self.accepted), Fraction(0))

    def to_json(self) -> dict:
        return {
            "format": "loopfill-mesh/1",
            "success": self.success,
            "failure_reason": self.failure_reason,
            "tier": self.tier,
            "tier_outcomes": self.tier_outcomes,
            "config": self.config.to_json(),
            "loop": self.loop.to_json() if self.loop is not None else None,
            "vertices": {
                c.key: {
                    "point": rec.point.tolist(),
                    "verified": rec.verified,
                    "repaired": rec.was_repaired,
                    "repair_iters": rec.repair_iters,
                }
                for c, rec in self.vertices.items()
            },
            "accepted": [
                {"i": aq.quad.i, "j": aq.quad.j, "level": aq.level, "mechanism": aq.mechanism, "grid_m": aq.grid_m}
                for aq in self.accepted
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SurfaceMesh":
        store = VertexStore()
        for key, rec in doc["vertices"].items():
            store.insert(DyadicCoord.from_key(key), VertexRecord(
                np.asarray(rec["point"], dtype=np.float64), bool(rec["verified"]),
                bool(rec.get("repaired", False)), int(rec.get("repair_iters", 0))))
        accepted = [AcceptedQuad(Quad(a["i"], a["j"], a["level"]), a["mechanism"], a.get("grid_m"))
                    for a in doc["accepted"]]
        loop = LoopSpec.from_json(doc["loop"]) if doc.get("loop") else None
        return cls(accepted, store, loop, FillConfig.from_json(doc["config"]), bool(doc["success"]),
                   doc.get("failure_reason"), doc.get("tier", "default"), dict(doc.get("tier_outcomes", {})))


class _Abort(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _pow2_at_least(m: int) -> int:
    return 1 << max(0, (m - 1).bit_length())


def grid_m_for_diameter(diam_grey: float, tau: float, m_min: int) -> int:
    m_raw = max(m_min, math.ceil(diam_grey / tau))
    return _pow2_at_least(m_raw)


def choose_grid_m(corners: Iterable[np.ndarray], cal: GreyCalibration, cfg: FillConfig) -> int:
    return grid_m_for_diameter(quad_grey_diameter(list(corners), cal), cfg.tau, cfg.m_min)


def grid_check(corners, y: int, m: int, clf) -> tuple[bool, tuple[int, int] | None]:
    """Sample ``Q(a/m, b/m)`` on all ``(m+1)**2`` grid points.

    Returns ``(passed, first_failure)`` where ``first_failure`` is the
    lexicographically smallest failing ``(a, b)``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    pts = bilinear_grid(*corners, m)
    labels = np.asarray(clf.classify_batch(pts)).reshape(m + 1, m + 1)
    bad = np.argwhere(labels != y)
    if len(bad) == 0:
        return True, None
    first = min((int(a), int(b)) for b, a in bad)
    return False, first


def _diameters(corner_pts: np.ndarray) -> np.ndarray:
    # corner_pts: (Q, 4, n) -> max pairwise l2 distance per quad
    diffs = corner_pts[:, :, None, :] - corner_pts[:, None, :, :]
    return np.sqrt(np.einsum("qabk,qabk->qab", diffs, diffs)).reshape(len(corner_pts), -1).max(axis=1)


def _boundary_site(c: DyadicCoord) -> tuple[int, int] | None:
    """Curve index and curve parameter (scaled by PARAM_SCALE) for a boundary coord."""
    n = 1 << c.level
    shift = LEVEL_CAP - c.level
    if c.j == 0:
        return 0, c.i << shift
    if c.j == n:
        return 2, c.i << shift
    if c.i == 0:
        return 3, c.j << shift
    if c.i == n:
        return 1, c.j << shift
    return None


class _Filler:
    def __init__(self, loop: LoopSpec, clf, cal: GreyCalibration, cfg: FillConfig, repair: RepairConfig,
                 record_timing: bool):
        self.loop = loop.copy()
        self.clf = clf
        self.cal = cal
        self.cfg = cfg
        self.repair = repair
        self.y = loop.label
        self.store = VertexStore()
        self.accepted: list[AcceptedQuad] = []
        self.stats = FillStats()
        self.clock = time.perf_counter if record_timing else (lambda: 0.0)

    def run(self) -> SurfaceMesh:
        t_start = self.clock()
        for c, p in zip(root_quad().corners, self.loop.anchors):
            self.store.insert(c, VertexRecord(p, True))
        active = [root_quad()]
        level = 0
        reason = None
        try:
            while active:
                self.stats.levels_processed = level + 1
                active.sort(key=lambda q: (q.j, q.i))
                failing = self._check_level(active, level)
                if not failing:
                    break
                if level >= self.cfg.max_depth:
                    raise _Abort(MAX_DEPTH_EXCEEDED)
                self._subdivide(failing)
                active = [child for q in failing for child in q.children()]
                level += 1
        except _Abort as exc:
            reason = exc.reason
        self.stats.total_seconds = self.clock() - t_start
        return SurfaceMesh(self.accepted, self.store, self.loop, self.cfg, reason is None, reason,
                           stats=self.stats)

    def _check_level(self, active: list[Quad], level: int) -> list[Quad]:
        t0 = self.clock()
        corners = [q.corners for q in active]
        recs = [[self.store[c] for c in cs] for cs in corners]
        pts = np.array([[r.point for r in rs] for rs in recs])
        diams = _diameters(pts) / self.cal.grey_scale
        pending = []
        for q, rs, diam, zs in zip(active, recs, diams, pts):
            if diam <= self.cfg.tau and all(r.verified for r in rs):
                self.accepted.append(AcceptedQuad(q, SIZE_THRESHOLD))
            else:
                pending.append((q, grid_m_for_diameter(float(diam), self.cfg.tau, self.cfg.m_min), zs))
        failing = []
        mech = ROOT_GRID_CHECK if level == 0 else GRID_CHECK
        for start, stop in _chunks([(m + 1) ** 2 for _, m, _ in pending]):
            group = pending[start:stop]
            samples = np.concatenate([bilinear_grid(*zs, m) for _, m, zs in group])
            labels = np.asarray(self.clf.classify_batch(samples))
            self.stats.grid_evaluations += len(samples)
            offset = 0
            for q, m, _ in group:
                n = (m + 1) ** 2
                if np.all(labels[offset:offset + n] == self.y):
                    self.accepted.append(AcceptedQuad(q, mech, m))
                else:
                    failing.append(q)
                offset += n
        self.stats.grid_seconds += self.clock() - t0
        return failing

    def _subdivide(self, failing: list[Quad]) -> None:
        t0 = self.clock()
        repair_time = 0.0
        created: list[tuple[DyadicCoord, np.ndarray, tuple[int, int] | None]] = []
        seen = set()
        for q in failing:
            c00, c10, c01, c11 = q.corners
            z00, z10, z01, z11 = (self.store.point(c) for c in (c00, c10, c01, c11))
            edges = ((z00, z10), (z00, z01), (z10, z11), (z01, z11))
            new = q.new_coords()
            for k, c in enumerate(new):
                if c in self.store or c in seen:
                    continue
                seen.add(c)
                site = _boundary_site(c) if k < 4 else None
                if site is not None:
                    p = self.loop.curves[site[0]].eval_param(site[1])
                elif k < 4:
                    p = midpoint(*edges[k])
                else:
                    p = 0.25 * z00 + 0.25 * z10 + 0.25 * z01 + 0.25 * z11
                created.append((c, p, site))
        labels = np.asarray(self.clf.classify_batch(np.array([p for _, p, _ in created]))) if created else []
        for (c, p, site), lab in zip(created, labels):
            if lab == self.y:
                self.store.insert(c, VertexRecord(p, True))
                continue
            t1 = self.clock()
            out = repair_vertex(p, self.y, self.clf, self.repair, self.cal)
            repair_time += self.clock() - t1
            self.stats.repair_iters.append(out.iterations_used)
            if not out.success:
                self.stats.repair_failures += 1
                self.stats.repair_seconds += repair_time
                self.stats.subdivision_seconds += self.clock() - t0 - repair_time
                raise _Abort(VERTEX_REPAIR_FAILED)
            if site is not None:
                self._refine_curve(c, site, out.repaired, out.iterations_used)
            self.store.insert(c, VertexRecord(out.repaired, True, True, out.iterations_used))
        self.stats.repair_seconds += repair_time
        self.stats.subdivision_seconds += self.clock() - t0 - repair_time

    def _refine_curve(self, c: DyadicCoord, site: tuple[int, int], point: np.ndarray, iters: int) -> None:
        curve = self.loop.curves[site[0]]
        p = site[1]
        half = PARAM_SCALE >> c.level
        # Pin both neighbours as explicit vertices first so the insertion only bends the curve
        # between them, where no stored vertex exists yet.
        for nb in (p - half, p + half):
            if not curve.has_param(nb):
                curve.insert(nb, curve.eval_param(nb).copy(), False, 0)
        curve.insert(p, point, True, iters)
        self.stats.boundary_refinements += 1


def _chunks(sizes: list[int]):
    start, total = 0, 0
    for k, s in enumerate(sizes):
        if total and total + s > BATCH_POINTS:
            yield start, k
            start, total = k, 0
        total += s
    if start < len(sizes):
        yield start, len(sizes)


def check_loop(loop: LoopSpec, clf) -> None:
    """Raise :class:`LoopPreconditionError` unless every anchor and curve vertex carries the loop label."""
    x00, x10, x01, x11 = loop.anchors
    ends = ((x00, x10), (x10, x11), (x01, x11), (x00, x01))
    for k, (curve, (a, b)) in enumerate(zip(loop.curves, ends)):
        if not (np.array_equal(curve.start, a) and np.array_equal(curve.end, b)):
            raise LoopPreconditionError(f"curve g{k} does not join its anchors")
        labels = np.asarray(clf.classify_batch(curve.vertices))
        bad = np.flatnonzero(labels != loop.label)
        if len(bad):
            raise LoopPreconditionError(f"curve g{k} vertex {int(bad[0])} has label {int(labels[bad[0]])}, "
                                        f"expected {loop.label}")


def fill(loop: LoopSpec, clf, cal: GreyCalibration, cfg: FillConfig, record_timing: bool = True) -> SurfaceMesh:
    """Fill ``loop``; on a vertex-repair failure rerun once with ``cfg.retry_repair`` if set."""
    check_loop(loop, clf)
    mesh = _Filler(loop, clf, cal, cfg, cfg.repair, record_timing).run()
    mesh.tier_outcomes = {"default": "success" if mesh.success else mesh.failure_reason}
    if mesh.failure_reason == VERTEX_REPAIR_FAILED and cfg.retry_repair is not None:
        first = mesh
        mesh = _Filler(loop, clf, cal, cfg, cfg.retry_repair, record_timing).run()
        mesh.tier = "strong"
        mesh.tier_outcomes = {**first.tier_outcomes, "strong": "success" if mesh.success else mesh.failure_reason}
        _merge_stats(mesh.stats, first.stats)
    return mesh


def _merge_stats(into: FillStats, other: FillStats) -> None:
    into.grid_seconds += other.grid_seconds
    into.subdivision_seconds += other.subdivision_seconds
    into.repair_seconds += other.repair_seconds
    into.boundary_seconds += other.boundary_seconds
    into.total_seconds += other.total_seconds


def fill_anchors(anchors, y: int, clf, cal: GreyCalibration, cfg: FillConfig,
                 record_timing: bool = True) -> SurfaceMesh:
    """Build the boundary loop and fill it, applying the retry tier to both stages.

    A boundary repair failure yields a failed mesh with ``loop=None``.
    """
    tiers = [("default", cfg.repair)]
    if cfg.retry_repair is not None:
        tiers.append(("strong", cfg.retry_repair))
    outcomes: dict[str, str] = {}
    mesh = None
    for name, repair in tiers:
        t0 = time.perf_counter()
        try:
            loop = build_loop(anchors, y, clf, cal, cfg.tau, repair)
        except CurveConstructionError:
            outcomes[name] = VERTEX_REPAIR_FAILED
            mesh = SurfaceMesh([], VertexStore(), None, cfg, False, VERTEX_REPAIR_FAILED)
            continue
        boundary_seconds = time.perf_counter() - t0 if record_timing else 0.0
        mesh = _Filler(loop, clf, cal, cfg, repair, record_timing).run()
        mesh.stats.boundary_seconds = boundary_seconds
        mesh.stats.total_seconds += boundary_seconds
        mesh.stats.loop_repair_iters = [it for c in loop.curves for it, r in zip(c.repair_iters, c.repaired) if r]
        outcomes[name] = "success" if mesh.success else mesh.failure_reason
        mesh.tier = name
        if mesh.failure_reason != VERTEX_REPAIR_FAILED:
            break
    mesh.tier_outcomes = outcomes
    return mesh
