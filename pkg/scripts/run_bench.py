"""Run the benchmark over scene families and print a summary table.

    python scripts/run_bench.py --families 0 1 4 --seeds 20 --ablation --out runs/bench
"""

import argparse
import json
import time
from pathlib import Path

from pushplan.harness.bench import bench
from pushplan.harness.generators import FAMILIES
from pushplan.harness.plots import emit_plots
from pushplan.planner import PlanParams


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--families", type=int, nargs="+", default=list(FAMILIES))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n-max", type=int, default=1000)
    ap.add_argument("--ablation", action="store_true", help="also run the contact-disabled arm")
    ap.add_argument("--jobs", type=int)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    t0 = time.perf_counter()
    rep = bench(args.families, range(args.seeds), PlanParams(n_max=args.n_max), ablation=args.ablation,
                parallelism=args.jobs)
    wall = time.perf_counter() - t0
    print(f"{'family':>6} {'arm':>10} {'success':>8} {'nodes':>8} {'length m':>9} {'time s':>7}")
    for row in rep.summary():
        print(f"{row['family']:>6} {row['arm']:>10} {row['success_rate']:>8.0%} {row['nodes_mean']:>8.0f} "
              f"{row['length_median']:>9.3f} {row['time_median']:>7.2f}")
    print(f"total wall time {wall:.1f} s")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        rep.write_csv(args.out / "bench.csv")
        emit_plots(rep, args.out)
        (args.out / "summary.json").write_text(json.dumps(rep.summary(), indent=1))


if __name__ == "__main__":
    main()
