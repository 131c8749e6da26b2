"""Run every bundled suite config and print one summary line each.

    python3 scripts/run_suites.py --out runs
    python3 scripts/run_suites.py --only ball_r8 union_r2 --workers 4
"""

import argparse
import json
from pathlib import Path

from loopfill.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--only", nargs="*", help="config names (without .json)")
    ap.add_argument("--workers", type=int, default=1)
    return ap.parse_args(argv)


def run(argv=None) -> int:
    args = parse_args(argv)
    names = args.only or sorted(p.stem for p in CONFIGS.glob("*.json"))
    worst = 0
    for name in names:
        out = args.out / name
        code = main(["suite", str(CONFIGS / f"{name}.json"), "--out", str(out), "--workers", str(args.workers)])
        summary = json.loads((out / "summary.json").read_text())
        mesh = summary.get("mesh", {})
        print(f"{name}: exit {code}, avg quads {mesh.get('avg_final_quads')}, "
              f"max depth {mesh.get('max_depth')}, median rho {summary.get('rho', {}).get('median')}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(run())
