"""Measurement battery over fill results, plus independent audits and oracle rechecks.

Area bookkeeping is exact (``fractions.Fraction``); floats appear only when
values are serialised.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .coons import CoonsPatch, DegenerateLoop, area_ratio, coons_area, mesh_area
from .filling import GRID_CHECK, MECHANISMS, ROOT_GRID_CHECK, SIZE_THRESHOLD, SurfaceMesh, _boundary_site
from .geometry import DyadicCoord

THRESHOLDS = (50, 75, 90, 95, 99)


class DiagnosticUnavailable(ValueError):
    pass


def _require_success(mesh: SurfaceMesh) -> None:
    if not mesh.success:
        raise DiagnosticUnavailable(f"mesh did not succeed ({mesh.failure_reason})")


@dataclass
class CoverageProfile:
    cumulative: list[Fraction]
    depths: dict[int, int]

    def padded(self, length: int) -> list[Fraction]:
        """Right-pad with the final value (for aligning loops of unequal depth)."""
        tail = self.cumulative[-1] if self.cumulative else Fraction(0)
        return self.cumulative + [tail] * (length - len(self.cumulative))


def coverage_profile(mesh: SurfaceMesh) -> CoverageProfile:
    _require_success(mesh)
    per_level = [Fraction(0)] * (mesh.max_level + 1)
    for aq in mesh.accepted:
        per_level[aq.level] += aq.quad.area
    cumulative, total = [], Fraction(0)
    for a in per_level:
        total += a
        cumulative.append(total)
    depths = {}
    for p in THRESHOLDS:
        target = Fraction(p, 100)
        depths[p] = next(d for d, c in enumerate(cumulative) if c >= target)
    return CoverageProfile(cumulative, depths)


def mechanism_fractions(mesh: SurfaceMesh) -> dict[str, Fraction]:
    _require_success(mesh)
    sums = {m: Fraction(0) for m in MECHANISMS}
    for aq in mesh.accepted:
        sums[aq.mechanism] += aq.quad.area
    total = sum(sums.values())
    return {m: s / total for m, s in sums.items() if s}


@dataclass
class RecheckReport:
    samples: int
    violations: int
    worst_quad: tuple[int, int, int] | None
    worst_fraction: float
    violations_by_mechanism: dict[str, int]

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.samples if self.samples else 0.0

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["violation_fraction"] = self.violation_fraction
        doc["worst_quad"] = list(self.worst_quad) if self.worst_quad else None
        return doc


def _lerp_grid(z00, z10, z01, z11, s: int) -> np.ndarray:
    # Edge-then-edge interpolation; algebraically the bilinear patch, computed independently.
    t = np.arange(s + 1, dtype=np.float64) / s
    u = t[None, :, None]
    v = t[:, None, None]
    bottom = (1 - u) * z00 + u * z10
    top = (1 - u) * z01 + u * z11
    return ((1 - v) * bottom + v * top).reshape(-1, z00.shape[0])


def oracle_recheck(mesh: SurfaceMesh, clf, samples_per_quad: int | None = None, density_factor: int = 4,
                   size_samples: int = 8) -> RecheckReport:
    """Resample every accepted quad densely.

    Without ``samples_per_quad`` a grid-accepted quad uses ``density_factor * m``
    and a size-accepted quad uses ``size_samples`` subdivisions per side.
    """
    _require_success(mesh)
    y = mesh.loop.label
    total = bad = 0
    worst, worst_frac = None, 0.0
    by_mech = {m: 0 for m in MECHANISMS}
    for aq in mesh.accepted:
        if samples_per_quad is not None:
            s = samples_per_quad
        elif aq.grid_m:
            s = density_factor * aq.grid_m
        else:
            s = size_samples
        pts = _lerp_grid(*mesh.corner_points(aq.quad), s)
        labels = np.asarray(clf.classify_batch(pts))
        nbad = int(np.count_nonzero(labels != y))
        total += len(pts)
        bad += nbad
        by_mech[aq.mechanism] += nbad
        frac = nbad / len(pts)
        if frac > worst_frac:
            worst, worst_frac = (aq.quad.i, aq.quad.j, aq.level), frac
    return RecheckReport(total, bad, worst, worst_frac, by_mech)


@dataclass
class AuditReport:
    tiling_ok: bool
    area_sum: Fraction
    vertex_violations: int
    grid_violations: int
    boundary_mismatches: int
    missing_vertices: int
    size_violations: int
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.tiling_ok and self.vertex_violations == 0 and self.grid_violations == 0
                and self.boundary_mismatches == 0 and self.missing_vertices == 0 and self.size_violations == 0)


def audit_mesh(mesh: SurfaceMesh, clf, cal=None) -> AuditReport:
    """Re-verify a successful mesh without trusting any flag the fill recorded."""
    _require_success(mesh)
    y = mesh.loop.label
    msgs = []

    area = sum((aq.quad.area for aq in mesh.accepted), Fraction(0))
    seen = set()
    overlap = False
    for aq in sorted(mesh.accepted, key=lambda a: a.level):
        q = aq.quad
        i, j = q.i, q.j
        for d in range(q.level, -1, -1):
            if (i, j, d) in seen:
                overlap = True
                msgs.append(f"quad {q} overlaps an accepted ancestor")
                break
            i >>= 1
            j >>= 1
        seen.add((q.i, q.j, q.level))
    tiling_ok = area == 1 and not overlap

    coords = list(mesh.vertices)
    pts = np.array([mesh.vertices[c].point for c in coords])
    verified = np.array([mesh.vertices[c].verified for c in coords])
    labels = np.asarray(clf.classify_batch(pts))
    vertex_violations = int(np.count_nonzero(verified & (labels != y)))

    missing = 0
    grid_violations = 0
    size_violations = 0
    for aq in mesh.accepted:
        try:
            zs = mesh.corner_points(aq.quad)
        except KeyError:
            missing += 1
            continue
        if aq.mechanism in (GRID_CHECK, ROOT_GRID_CHECK):
            labels = np.asarray(clf.classify_batch(_lerp_grid(*zs, aq.grid_m)))
            if np.any(labels != y):
                grid_violations += 1
                msgs.append(f"grid-accepted quad {aq.quad} fails its own sample grid")
        elif aq.mechanism == SIZE_THRESHOLD and cal is not None:
            diam = max(np.linalg.norm(a - b) for k, a in enumerate(zs) for b in zs[k + 1:]) / cal.grey_scale
            if diam > mesh.config.tau:
                size_violations += 1

    mismatches = 0
    for c in coords:
        site = _boundary_site(c)
        if site is None or c.level == 0:
            continue
        curve = mesh.loop.curves[site[0]]
        if not np.array_equal(curve.eval_param(site[1]), mesh.vertices[c].point):
            mismatches += 1
    for c, anchor in zip(((0, 0), (1, 0), (0, 1), (1, 1)), mesh.loop.anchors):
        if not np.array_equal(mesh.vertices[DyadicCoord(c[0], c[1], 0)].point, anchor):
            mismatches += 1
    return AuditReport(tiling_ok, area, vertex_violations, grid_violations, mismatches, missing,
                       size_violations, msgs)


def _margin(clf, x, y: int) -> float | None:
    if not hasattr(clf, "logits"):
        return None
    z = np.asarray(clf.logits(x), dtype=np.float64)
    others = np.delete(z, y)
    return float(z[y] - others.max()) if len(others) else None


@dataclass
class RunReport:
    loop_id: int
    success: bool
    tier: str
    tier_outcomes: dict
    failure_reason: str | None
    root_accepted: bool
    final_quads: int
    final_vertices: int
    max_level: int
    mechanism_fractions: dict[str, Fraction]
    coverage: list[Fraction]
    depths: dict[int, int]
    fill_repairs: int
    loop_repairs: int
    repair_iters: list[int]
    boundary_refinements: int
    rho: float | None
    coons_area: float | None
    mesh_area: float | None
    anchor_margin: float | None
    timing: dict[str, float] | None
    recheck: dict | None = None

    @property
    def repairs(self) -> int:
        return self.fill_repairs + self.loop_repairs

    @property
    def mean_repair_iters(self) -> float:
        return statistics.fmean(self.repair_iters) if self.repair_iters else 0.0

    @property
    def max_repair_iters(self) -> int:
        return max(self.repair_iters, default=0)

    def to_json(self) -> dict:
        return {
            "loop_id": self.loop_id,
            "success": self.success,
            "tier": self.tier,
            "tier_outcomes": self.tier_outcomes,
            "failure_reason": self.failure_reason,
            "root_accepted": self.root_accepted,
            "final_quads": self.final_quads,
            "final_vertices": self.final_vertices,
            "max_level": self.max_level,
            "mechanism_fractions": {k: float(v) for k, v in self.mechanism_fractions.items()},
            "mechanism_fractions_exact": {k: str(v) for k, v in self.mechanism_fractions.items()},
            "coverage": [float(c) for c in self.coverage],
            "coverage_exact": [str(c) for c in self.coverage],
            "depths": {f"D{p}": d for p, d in self.depths.items()},
            "repairs": {
                "fill": self.fill_repairs,
                "loop": self.loop_repairs,
                "mean_iters": self.mean_repair_iters,
                "max_iters": self.max_repair_iters,
                "boundary_refinements": self.boundary_refinements,
            },
            "rho": self.rho,
            "coons_area": self.coons_area,
            "mesh_area": self.mesh_area,
            "anchor_margin": self.anchor_margin,
            "timing": self.timing,
            "recheck": self.recheck,
            "notes": {
                "rho": "mesh and Coons patch triangulated on the same parameter grid",
                "coverage_padding": "suite coverage curves are right-padded with their final value",
                "recheck": "dense oracle recheck is an addition to the fill procedure",
            },
        }


def build_report(mesh: SurfaceMesh, clf=None, loop_id: int = 0, coons_resolution: int = 128,
                 recheck: dict | None = None, record_timing: bool = True) -> RunReport:
    st = mesh.stats
    timing = None
    if record_timing:
        timing = {
            "total": st.total_seconds,
            "grid": st.grid_seconds,
            "subdivision": st.subdivision_seconds,
            "repair": st.repair_seconds,
            "boundary": st.boundary_seconds,
        }
    iters = list(st.loop_repair_iters) + list(st.repair_iters)
    margin = None
    if clf is not None and mesh.loop is not None:
        margins = [_margin(clf, x, mesh.loop.label) for x in mesh.loop.anchors]
        margin = min(margins) if None not in margins else None
    common = dict(
        loop_id=loop_id, tier=mesh.tier, tier_outcomes=dict(mesh.tier_outcomes),
        fill_repairs=len(st.repair_iters), loop_repairs=len(st.loop_repair_iters), repair_iters=iters,
        boundary_refinements=st.boundary_refinements, anchor_margin=margin, timing=timing, recheck=recheck,
    )
    if not mesh.success:
        return RunReport(success=False, failure_reason=mesh.failure_reason, root_accepted=False,
                         final_quads=mesh.num_quads, final_vertices=mesh.num_vertices, max_level=mesh.max_level,
                         mechanism_fractions={}, coverage=[], depths={}, rho=None, coons_area=None,
                         mesh_area=None, **common)
    prof = coverage_profile(mesh)
    patch = CoonsPatch(mesh.loop)
    try:
        a_coons = coons_area(patch, coons_resolution)
        a_mesh = mesh_area(mesh, coons_resolution)
        rho = area_ratio(mesh, patch, coons_resolution)
    except DegenerateLoop:
        a_coons = a_mesh = rho = None
    root = len(mesh.accepted) == 1 and mesh.accepted[0].mechanism == ROOT_GRID_CHECK
    return RunReport(success=True, failure_reason=None, root_accepted=root, final_quads=mesh.num_quads,
                     final_vertices=mesh.num_vertices, max_level=mesh.max_level,
                     mechanism_fractions=mechanism_fractions(mesh), coverage=prof.cumulative,
                     depths=prof.depths, rho=rho, coons_area=a_coons, mesh_area=a_mesh, **common)


SUITE_COLUMNS = [
    "loop", "success", "tier", "default_outcome", "strong_outcome", "failure_reason", "root_accepted",
    "final_quads", "final_vertices", "max_level", "repairs", "fill_repairs", "loop_repairs",
    "mean_repair_iters", "max_repair_iters", "boundary_refinements",
    "frac_root_grid_check", "frac_grid_check", "frac_size_threshold",
    *[f"D{p}" for p in THRESHOLDS], "rho", "recheck_violation_fraction",
]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, Fraction):
        x = float(x)
    return repr(x) if isinstance(x, float) else str(x)


def suite_rows(reports: list[RunReport]) -> list[dict]:
    rows = []
    for r in reports:
        fr = r.mechanism_fractions
        rows.append({
            "loop": r.loop_id,
            "success": r.success,
            "tier": r.tier,
            "default_outcome": r.tier_outcomes.get("default"),
            "strong_outcome": r.tier_outcomes.get("strong"),
            "failure_reason": r.failure_reason,
            "root_accepted": r.root_accepted,
            "final_quads": r.final_quads,
            "final_vertices": r.final_vertices,
            "max_level": r.max_level,
            "repairs": r.repairs,
            "fill_repairs": r.fill_repairs,
            "loop_repairs": r.loop_repairs,
            "mean_repair_iters": r.mean_repair_iters,
            "max_repair_iters": r.max_repair_iters,
            "boundary_refinements": r.boundary_refinements,
            "frac_root_grid_check": fr.get(ROOT_GRID_CHECK, Fraction(0)) if r.success else None,
            "frac_grid_check": fr.get(GRID_CHECK, Fraction(0)) if r.success else None,
            "frac_size_threshold": fr.get(SIZE_THRESHOLD, Fraction(0)) if r.success else None,
            **{f"D{p}": r.depths.get(p) for p in THRESHOLDS},
            "rho": r.rho,
            "recheck_violation_fraction": (r.recheck or {}).get("violation_fraction"),
        })
    return rows


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _median(xs):
    return statistics.median(xs) if xs else None


def aggregate_suite(reports: list[RunReport]) -> dict:
    """Suite-level tables: success by repair tier, root acceptance, mesh size, repair difficulty, timing."""
    if not reports:
        raise ValueError("aggregate_suite needs at least one report")
    n = len(reports)
    ok = [r for r in reports if r.success]
    default_ok = sum(1 for r in reports if r.tier_outcomes.get("default") == "success")
    final_ok = len(ok)
    strong_tried = [r for r in reports if "strong" in r.tier_outcomes]
    iters = [it for r in ok for it in r.repair_iters]
    summary = {
        "loops_tested": n,
        "success": {
            "default_success": default_ok,
            "default_failure": n - default_ok,
            "strong_reruns": len(strong_tried),
            "final_success": final_ok,
            "final_failure": n - final_ok,
            "success_pct": 100.0 * final_ok / n,
        },
        "root": {
            "root_accepted": sum(1 for r in reports if r.root_accepted),
            "root_accepted_pct": 100.0 * sum(1 for r in reports if r.root_accepted) / n,
        },
        "mesh": {
            "avg_final_quads": statistics.fmean(r.final_quads for r in ok) if ok else None,
            "avg_final_vertices": statistics.fmean(r.final_vertices for r in ok) if ok else None,
            "max_depth": max((r.max_level for r in ok), default=None),
        },
        "repairs": {
            "avg_repairs": statistics.fmean(r.repairs for r in ok) if ok else None,
            "avg_iters": statistics.fmean(iters) if iters else 0.0,
            "max_iters": max(iters, default=0),
        },
        "rho": {
            "median": _median([r.rho for r in ok if r.rho is not None]),
        },
        "mechanisms": {
            m: statistics.fmean(float(r.mechanism_fractions.get(m, 0)) for r in ok) if ok else None
            for m in MECHANISMS
        },
        "depths": {
            f"D{p}": _median([r.depths[p] for r in ok]) for p in THRESHOLDS
        },
    }
    timed = [r.timing for r in ok if r.timing]
    if timed:
        summary["timing_median_seconds"] = {
            k: statistics.median(t[k] for t in timed) for k in ("total", "grid", "subdivision", "repair")
        }
    return summary


def coverage_rows(reports: list[RunReport]) -> tuple[list[dict], list[str]]:
    ok = [r for r in reports if r.success]
    depth = max((len(r.coverage) for r in ok), default=0)
    columns = ["loop", "root_accepted"] + [f"level_{d}" for d in range(depth)]
    rows = []
    for r in ok:
        padded = CoverageProfile(r.coverage, r.depths).padded(depth)
        rows.append({"loop": r.loop_id, "root_accepted": r.root_accepted,
                     **{f"level_{d}": c for d, c in enumerate(padded)}})
    return rows, columns


ABLATION_COLUMNS = ["tau", "success_pct", "median_rho", "avg_final_quads", "avg_final_vertices", "max_depth"]


def ablation_row(tau: float, summary: dict) -> dict:
    return {
        "tau": tau,
        "success_pct": summary["success"]["success_pct"],
        "median_rho": summary["rho"]["median"],
        "avg_final_quads": summary["mesh"]["avg_final_quads"],
        "avg_final_vertices": summary["mesh"]["avg_final_vertices"],
        "max_depth": summary["mesh"]["max_depth"],
    }
