"""Threshold ablation over the nonconvex suites, collected into one table.

    python3 scripts/tau_ablation.py --out runs/ablation --taus 1,0.5,0.25,0.125
"""

import argparse
import csv
from pathlib import Path

from loopfill.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SUITES = ["lshape_r2", "lshape_r16", "union_r2", "union_r16"]


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ap.add_argument("--taus", default="1,0.5,0.25,0.125")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    rows, worst = [], 0
    for name in SUITES:
        out = args.out / name
        worst = max(worst, main(["suite", str(CONFIGS / f"{name}.json"), "--taus", args.taus,
                                 "--out", str(out), "--workers", str(args.workers), "--no-timing"]))
        with open(out / "ablation.csv", newline="") as fh:
            rows += [{"suite": name, **r} for r in csv.DictReader(fh)]
    with open(args.out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['suite']:>11} tau={r['tau']:<6} success={r['success_pct']}% "
              f"quads={float(r['avg_final_quads']):.1f} depth={r['max_depth']}")
    return worst


if __name__ == "__main__":
    raise SystemExit(run())
