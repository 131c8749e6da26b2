"""Command-line harness: ``loopfill {fill,suite,mkmodel,recheck,report}``.

Exit codes:

    0  success
    1  suite finished but at least one loop failed
    2  configuration error
    3  vertex repair failed (boundary or interior, after any retry tier)
    4  maximum refinement depth reached
    5  bridge transport or protocol failure
    6  anchor sampling exhausted its budget
    7  an anchor does not carry the loop label
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .boundary import LoopPreconditionError
from .bridge import BridgeError, open_bridge, parse_bridge_target
from .classifiers import (
    ClassifierError,
    ConfigError,
    MembershipOracle,
    TinyMLP,
    fit_last_layer,
    make_suite_classifier,
    random_mlp,
)
from .diagnostics import (
    ABLATION_COLUMNS,
    SUITE_COLUMNS,
    RunReport,
    ablation_row,
    aggregate_suite,
    build_report,
    coverage_rows,
    oracle_recheck,
    suite_rows,
    to_csv,
)
from .filling import MAX_DEPTH_EXCEEDED, VERTEX_REPAIR_FAILED, FillConfig, SurfaceMesh, fill_anchors
from .geometry import GeometryError, GreyCalibration, make_grey_calibration
from .repair import DEFAULT_REPAIR, STRONG_REPAIR, RepairConfig
from .sampling import SamplingError, loop_rng, sample_anchors

EXIT_OK = 0
EXIT_SUITE_FAILURES = 1
EXIT_CONFIG = 2
EXIT_REPAIR = 3
EXIT_DEPTH = 4
EXIT_TRANSPORT = 5
EXIT_SAMPLING = 6
EXIT_ANCHOR = 7

_FAILURE_EXIT = {VERTEX_REPAIR_FAILED: EXIT_REPAIR, MAX_DEPTH_EXCEEDED: EXIT_DEPTH}


@dataclass
class RunConfig:
    classifier: dict
    calibration: GreyCalibration
    fill: FillConfig = field(default_factory=lambda: FillConfig(retry_repair=STRONG_REPAIR))
    anchors: list | None = None
    sampling: dict | None = None
    label: int | None = None
    out: Path = Path("out")
    seed: int = 0
    count: int = 1
    recheck: bool = False
    recheck_factor: int = 4
    coons_resolution: int = 128
    workers: int = 1
    record_timing: bool = True
    taus: list[float] | None = None

    def to_json(self) -> dict:
        return {
            "classifier": self.classifier,
            "calibration": {"grey_scale": self.calibration.grey_scale},
            "fill": self.fill.to_json(),
            "anchors": self.anchors,
            "sampling": self.sampling,
            "label": self.label,
            "out": str(self.out),
            "seed": self.seed,
            "count": self.count,
            "recheck": self.recheck,
            "recheck_factor": self.recheck_factor,
            "coons_resolution": self.coons_resolution,
            "workers": self.workers,
            "record_timing": self.record_timing,
            "taus": self.taus,
        }


def _field(doc: dict, name: str, kind, default=None, required=False, prefix: str = ""):
    if name not in doc or doc[name] is None:
        if required:
            raise ConfigError(f"config field '{prefix}{name}' is required")
        return default
    try:
        return kind(doc[name])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field '{prefix}{name}': {exc}") from None


def _repair_cfg(doc, name: str) -> RepairConfig | None:
    if doc is None:
        return None
    if isinstance(doc, str):
        presets = {"default": DEFAULT_REPAIR, "strong": STRONG_REPAIR}
        if doc not in presets:
            raise ConfigError(f"config field '{name}': unknown preset {doc!r}")
        return presets[doc]
    if not isinstance(doc, dict):
        raise ConfigError(f"config field '{name}' must be an object or preset name")
    try:
        return RepairConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field '{name}': {exc}") from None


def _calibration(doc) -> GreyCalibration:
    if not isinstance(doc, dict):
        raise ConfigError("config field 'calibration' must be an object")
    try:
        if "grey_scale" in doc:
            return GreyCalibration(float(doc["grey_scale"]))
        return make_grey_calibration(doc["height"], doc["width"], doc["sigmas"])
    except KeyError as exc:
        raise ConfigError(f"config field 'calibration.{exc.args[0]}' is required") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field 'calibration': {exc}") from None


def _fill_cfg(doc) -> FillConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config field 'fill' must be an object")
    known = {"tau", "m_min", "max_depth", "repair", "retry_repair"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"config field 'fill.{sorted(extra)[0]}' is not recognised")
    repair = _repair_cfg(doc.get("repair", "default"), "fill.repair")
    retry = _repair_cfg(doc["retry_repair"], "fill.retry_repair") if "retry_repair" in doc else STRONG_REPAIR
    try:
        return FillConfig(
            tau=_field(doc, "tau", float, 0.5, prefix="fill."),
            m_min=_field(doc, "m_min", int, 2, prefix="fill."),
            max_depth=_field(doc, "max_depth", int, 12, prefix="fill."),
            repair=repair,
            retry_repair=retry,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field 'fill': {exc}") from None


def parse_classifier_flag(text: str) -> dict:
    """``bridge:cmd=...``, ``bridge:tcp=h:p``, ``mlp:path``, a JSON object, or ``name[:k=v,...]``."""
    text = text.strip()
    if text.startswith("bridge:"):
        try:
            return parse_bridge_target(text)
        except ValueError as exc:
            raise ConfigError(f"config field 'classifier': {exc}") from None
    if text.startswith("mlp:"):
        return {"type": "mlp", "path": text[4:]}
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config field 'classifier': {exc}") from None
    name, _, params = text.partition(":")
    spec: dict = {"type": name}
    for item in filter(None, params.split(",")):
        key, _, value = item.partition("=")
        try:
            spec[key] = json.loads(value)
        except json.JSONDecodeError:
            spec[key] = value
    return spec


def load_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    fill_doc = dict(doc.get("fill") or {})
    for key in ("tau", "max_depth"):
        if key in doc:
            fill_doc[key] = doc.pop(key)
    clf = doc.get("classifier")
    if isinstance(clf, str):
        clf = parse_classifier_flag(clf)
    if not isinstance(clf, dict) or "type" not in clf:
        raise ConfigError("config field 'classifier' must name a classifier type")
    if "calibration" not in doc:
        raise ConfigError("config field 'calibration' is required")
    anchors = doc.get("anchors")
    if anchors is not None:
        if not isinstance(anchors, list) or len(anchors) != 4:
            raise ConfigError("config field 'anchors' must list four points (x00, x10, x01, x11)")
        try:
            anchors = [np.asarray(a, dtype=np.float64).tolist() for a in anchors]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config field 'anchors': {exc}") from None
    sampling = doc.get("sampling")
    if anchors is None and sampling is None:
        raise ConfigError("config field 'anchors' or 'sampling' is required")
    if sampling is not None and not (isinstance(sampling, dict) and "lo" in sampling and "hi" in sampling):
        raise ConfigError("config field 'sampling' needs 'lo' and 'hi' box corners")
    taus = doc.get("taus")
    if taus is not None:
        try:
            taus = [float(t) for t in taus]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config field 'taus': {exc}") from None
    return RunConfig(
        classifier=clf,
        calibration=_calibration(doc["calibration"]),
        fill=_fill_cfg(fill_doc),
        anchors=anchors,
        sampling=sampling,
        label=_field(doc, "label", int),
        out=Path(_field(doc, "out", str, "out")),
        seed=_field(doc, "seed", int, 0),
        count=_field(doc, "count", int, 1),
        recheck=_field(doc, "recheck", bool, False),
        recheck_factor=_field(doc, "recheck_factor", int, 4),
        coons_resolution=_field(doc, "coons_resolution", int, 128),
        workers=_field(doc, "workers", int, 1),
        record_timing=_field(doc, "record_timing", bool, True),
        taus=taus,
    )


def build_classifier(spec: dict, seed: int = 0):
    if spec.get("type") == "bridge":
        return open_bridge(spec)
    return make_suite_classifier(spec, seed)


def oracle_for(spec: dict, clf):
    """Exact-membership classifier for analytic regions, else the classifier itself."""
    if hasattr(clf, "contains"):
        return MembershipOracle(clf)
    return clf


_CLASSIFIER_CACHE: dict[str, object] = {}


def _cached_classifier(spec: dict, seed: int):
    key = json.dumps([spec, seed], sort_keys=True)
    if key not in _CLASSIFIER_CACHE:
        _CLASSIFIER_CACHE[key] = build_classifier(spec, seed)
    return _CLASSIFIER_CACHE[key]


def _anchors_for(cfg: RunConfig, clf, index: int) -> tuple[list[np.ndarray], int]:
    y = cfg.label
    if cfg.anchors is not None:  # explicit anchors win over a sampling box
        anchors = [np.asarray(a, dtype=np.float64) for a in cfg.anchors]
        return anchors, clf.classify(anchors[0]) if y is None else y
    s = cfg.sampling
    y = 1 if y is None else y
    anchors = sample_anchors(
        clf, y, s["lo"], s["hi"], loop_rng(cfg.seed, index),
        budget=int(s.get("budget", 100_000)),
        encircle=s.get("encircle"),
        require_boundary_repair=bool(s.get("require_boundary_repair", False)),
        cal=cfg.calibration, tau=float(s.get("tau", cfg.fill.tau)),
    )
    return anchors, y


@dataclass
class LoopResult:
    index: int
    mesh_json: str | None
    report: RunReport | None
    error: str | None = None
    exit_code: int = EXIT_OK


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def run_one(cfg: RunConfig, index: int, clf=None) -> LoopResult:
    clf = clf if clf is not None else _cached_classifier(cfg.classifier, cfg.seed)
    anchors, y = _anchors_for(cfg, clf, index)
    mesh = fill_anchors(anchors, y, clf, cfg.calibration, cfg.fill, cfg.record_timing)
    recheck = None
    if cfg.recheck and mesh.success:
        recheck = oracle_recheck(mesh, oracle_for(cfg.classifier, clf), density_factor=cfg.recheck_factor).to_json()
    report = build_report(mesh, clf, index, cfg.coons_resolution, recheck, cfg.record_timing)
    code = EXIT_OK if mesh.success else _FAILURE_EXIT.get(mesh.failure_reason, EXIT_REPAIR)
    return LoopResult(index, _dump(mesh.to_json()), report, exit_code=code)


def _task(args) -> LoopResult:
    cfg_doc, index = args
    cfg = load_config(cfg_doc)
    try:
        return run_one(cfg, index)
    except SamplingError as exc:
        return LoopResult(index, None, None, str(exc), EXIT_SAMPLING)
    except LoopPreconditionError as exc:
        return LoopResult(index, None, None, str(exc), EXIT_ANCHOR)
    except BridgeError as exc:
        return LoopResult(index, None, None, str(exc), EXIT_TRANSPORT)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_fill_outputs(out: Path, result: LoopResult) -> None:
    if result.mesh_json is not None:
        _write(out / "mesh.json", result.mesh_json)
        mesh = SurfaceMesh.from_json(json.loads(result.mesh_json))
        rows = [{"i": aq.quad.i, "j": aq.quad.j, "level": aq.level, "mechanism": aq.mechanism,
                 "grid_m": aq.grid_m} for aq in mesh.accepted]
        _write(out / "quads.csv", to_csv(rows, ["i", "j", "level", "mechanism", "grid_m"]))
    if result.report is not None:
        _write(out / "report.json", _dump(result.report.to_json()))
        reports = [result.report]
        crow, ccols = coverage_rows(reports)
        _write(out / "coverage.csv", to_csv(crow, ccols))
        _write(out / "rho.csv", to_csv([{"loop": r.loop_id, "rho": r.rho} for r in reports if r.success],
                                       ["loop", "rho"]))


def cmd_fill(cfg: RunConfig) -> int:
    try:
        clf = build_classifier(cfg.classifier, cfg.seed)
        result = run_one(cfg, 0, clf)
    except SamplingError as exc:
        print(f"sampling error: {exc}", file=sys.stderr)
        return EXIT_SAMPLING
    except LoopPreconditionError as exc:
        print(f"anchor error: {exc}", file=sys.stderr)
        return EXIT_ANCHOR
    except BridgeError as exc:
        print(f"bridge error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    write_fill_outputs(cfg.out, result)
    r = result.report
    status = "success" if r.success else f"failed ({r.failure_reason})"
    print(f"fill {status}: quads={r.final_quads} vertices={r.final_vertices} depth={r.max_level} "
          f"root_accepted={r.root_accepted} rho={r.rho}")
    if r.recheck is not None:
        flag = " VIOLATION" if r.recheck["violations"] else ""
        print(f"recheck: {r.recheck['violations']}/{r.recheck['samples']} off-label samples{flag}")
    return result.exit_code


def run_suite(cfg: RunConfig) -> list[LoopResult]:
    doc = cfg.to_json()
    tasks = [(doc, k) for k in range(cfg.count)]
    results = []
    # a dead bridge peer fails every later loop the same way, so the suite stops at the first one
    if cfg.workers <= 1:
        for t in tasks:
            results.append(_task(t))
            if results[-1].exit_code == EXIT_TRANSPORT:
                break
        return results
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_task, t) for t in tasks]
        for fut in futures:
            results.append(fut.result())
            if results[-1].exit_code == EXIT_TRANSPORT:
                pool.shutdown(wait=True, cancel_futures=True)
                break
    return results


def write_suite_outputs(out: Path, results: list[LoopResult]) -> dict:
    reports = [r.report for r in results if r.report is not None]
    for r in results:
        loop_dir = out / "loops" / f"loop_{r.index:04d}"
        if r.mesh_json is not None:
            _write(loop_dir / "mesh.json", r.mesh_json)
        if r.report is not None:
            _write(loop_dir / "report.json", _dump(r.report.to_json()))
    _write(out / "suite.csv", to_csv(suite_rows(reports), SUITE_COLUMNS))
    crow, ccols = coverage_rows(reports)
    _write(out / "coverage.csv", to_csv(crow, ccols))
    _write(out / "rho.csv", to_csv([{"loop": r.loop_id, "rho": r.rho} for r in reports if r.success],
                                   ["loop", "rho"]))
    summary = aggregate_suite(reports) if reports else {"loops_tested": 0}
    summary["errors"] = {r.index: r.error for r in results if r.error}
    _write(out / "summary.json", _dump(summary))
    return summary


def cmd_suite(cfg: RunConfig) -> int:
    if cfg.count < 1:
        print("config error: 'count' must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.sampling is None:
        print("config error: config field 'sampling' is required for suites", file=sys.stderr)
        return EXIT_CONFIG
    taus = cfg.taus or [cfg.fill.tau]
    # the ablation reuses one set of loops, sampled at the configured threshold
    cfg = replace(cfg, sampling={"tau": cfg.fill.tau, **cfg.sampling})
    rows = []
    worst = EXIT_OK
    for tau in taus:
        run_cfg = replace(cfg, fill=replace(cfg.fill, tau=tau))
        out = cfg.out if not cfg.taus else cfg.out / f"tau_{tau:g}"
        results = run_suite(run_cfg)
        summary = write_suite_outputs(out, results)
        errors = [r for r in results if r.error]
        if errors:
            print(f"tau={tau:g}: {len(errors)} loops errored, first: {errors[0].error}", file=sys.stderr)
            worst = max(worst, errors[0].exit_code)
        s = summary.get("success", {})
        print(f"tau={tau:g}: {s.get('final_success', 0)}/{summary['loops_tested']} filled, "
              f"root accepted {summary.get('root', {}).get('root_accepted_pct')}%")
        if s.get("final_failure"):
            worst = max(worst, EXIT_SUITE_FAILURES)
        if cfg.taus:
            rows.append(ablation_row(tau, summary))
    if cfg.taus:
        _write(cfg.out / "ablation.csv", to_csv(rows, ABLATION_COLUMNS))
    return worst


def cmd_mkmodel(dims, seed: int, out: Path, init: str = "random", fit: dict | None = None,
                fit_box: tuple[float, float] = (-2.0, 2.0), fit_grid: int = 64, gain: float = 1.0) -> TinyMLP:
    model = random_mlp(dims, seed, init, gain)
    if fit is not None:
        region = make_suite_classifier(fit, seed)
        if region.dim != model.dim or model.num_labels < 2:
            raise ConfigError("fit region dimension must match the model input and the model needs >= 2 labels")
        rng = np.random.default_rng(seed + 1)
        xs = rng.uniform(fit_box[0], fit_box[1], size=(max(4096, 4 * fit_grid**2), model.dim))
        model = fit_last_layer(model, xs, region.classify_batch(xs))
    model.save(out)
    return model


def cmd_recheck(mesh_path: Path, cfg_classifier: dict, factor: int, out: Path | None) -> int:
    mesh = SurfaceMesh.from_json(json.loads(Path(mesh_path).read_text()))
    if not mesh.success:
        print(f"mesh did not succeed ({mesh.failure_reason}); nothing to recheck", file=sys.stderr)
        return _FAILURE_EXIT.get(mesh.failure_reason, EXIT_REPAIR)
    clf = build_classifier(cfg_classifier)
    rep = oracle_recheck(mesh, oracle_for(cfg_classifier, clf), density_factor=factor)
    doc = rep.to_json()
    _write(out or Path(mesh_path).with_name("recheck.json"), _dump(doc))
    print(f"recheck: {rep.violations}/{rep.samples} off-label samples "
          f"(fraction {rep.violation_fraction:.3g}), worst quad {rep.worst_quad}")
    return EXIT_OK


def cmd_report(run_dir: Path, out: Path | None, coons_resolution: int = 128) -> int:
    meshes = sorted(Path(run_dir).glob("**/mesh.json"))
    if not meshes:
        print(f"no mesh.json files under {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    reports = []
    for k, path in enumerate(meshes):
        mesh = SurfaceMesh.from_json(json.loads(path.read_text()))
        reports.append(build_report(mesh, None, k, coons_resolution, record_timing=False))
    out = out or Path(run_dir)
    _write(out / "suite.csv", to_csv(suite_rows(reports), SUITE_COLUMNS))
    _write(out / "summary.json", _dump(aggregate_suite(reports)))
    print(f"aggregated {len(reports)} meshes into {out}")
    return EXIT_OK


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", type=Path, help="run configuration (JSON)")
    p.add_argument("--tau", type=float)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--classifier")
    p.add_argument("--seed", type=int)
    p.add_argument("--recheck", action="store_true", default=None)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock timings (byte-stable reports)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loopfill", description="Fill same-label loops with label-preserving surfaces")
    sub = ap.add_subparsers(dest="command", required=True)
    _common_flags(sub.add_parser("fill", help="fill one loop"))
    p = sub.add_parser("suite", help="fill a seeded suite of loops")
    _common_flags(p)
    p.add_argument("--taus", help="comma-separated thresholds for an ablation run")
    p = sub.add_parser("mkmodel", help="write a seeded TinyMLP weight file")
    p.add_argument("--dims", required=True, help="comma-separated layer widths, e.g. 2,8,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=["random", "identity", "zero"], default="random")
    p.add_argument("--fit", help="classifier spec whose labelling the last layer is fitted to")
    p.add_argument("--fit-box", default="-2,2")
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    p = sub.add_parser("recheck", help="dense oracle recheck of a saved mesh")
    p.add_argument("mesh", type=Path)
    p.add_argument("--classifier", required=True)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--out", type=Path)
    p = sub.add_parser("report", help="re-aggregate saved meshes")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--coons-resolution", type=int, default=128)
    return ap


def _config_from_args(args) -> RunConfig:
    try:
        doc = json.loads(args.config.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    overrides = {
        "tau": args.tau,
        "max_depth": args.max_depth,
        "classifier": parse_classifier_flag(args.classifier) if args.classifier else None,
        "seed": args.seed,
        "recheck": args.recheck,
        "out": str(args.out) if args.out else None,
        "workers": args.workers,
        "count": args.count,
        "record_timing": False if args.no_timing else None,
    }
    if getattr(args, "taus", None):
        overrides["taus"] = [float(t) for t in args.taus.split(",")]
    return load_config(doc, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("fill", "suite"):
            cfg = _config_from_args(args)
            return cmd_fill(cfg) if args.command == "fill" else cmd_suite(cfg)
        if args.command == "mkmodel":
            fit = parse_classifier_flag(args.fit) if args.fit else None
            lo, hi = (float(v) for v in args.fit_box.split(","))
            dims = [int(d) for d in args.dims.split(",")]
            cmd_mkmodel(dims, args.seed, args.out, args.init, fit, (lo, hi), gain=args.gain)
            print(f"wrote {args.out}")
            return EXIT_OK
        if args.command == "recheck":
            return cmd_recheck(args.mesh, parse_classifier_flag(args.classifier), args.factor, args.out)
        if args.command == "report":
            return cmd_report(args.run_dir, args.out, args.coons_resolution)
    except (ConfigError, ClassifierError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BridgeError as exc:
        print(f"bridge error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
