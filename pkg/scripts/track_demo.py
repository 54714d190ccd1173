"""Plan on a generated scene, then track the plan with and without the disturbance observer.

    python scripts/track_demo.py --family 4 --seed 0 --force -0.1 0 --window 1 3 --out runs/track
"""

import argparse
from pathlib import Path

import numpy as np

from pushplan.control import MpcConfig, track
from pushplan.harness.generators import generate_scene
from pushplan.harness.plots import emit_plots
from pushplan.planner import PlanParams, plan
from pushplan.simulator import DisturbanceSchedule, Plant


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--family", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--force", type=float, nargs=2, default=(-0.1, 0.0), metavar=("FX", "FY"))
    ap.add_argument("--window", type=float, nargs=2, default=(1.0, 3.0), metavar=("T0", "T1"))
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    scene = generate_scene(args.family, args.seed)
    res = plan(scene.task(PlanParams(seed=args.seed)))
    if not res.success:
        raise SystemExit(f"planning failed after {res.stats['nodes_in_tree']} nodes")
    print(f"plan: {res.stats['nodes_in_tree']} nodes, {res.stats['path_length_m']:.3f} m")
    t0, t1 = args.window
    for obs in (True, False):
        sched = DisturbanceSchedule.force(scene.slider, t0, t1, args.force, scene.x0.pose.theta)
        log = track(scene.slider, res, Plant.from_scene(scene), MpcConfig(observer=obs), sched)
        t, e = np.array(log.times), log.error_norm
        during = e[(t >= t0) & (t < t1)].max(initial=0.0)
        after = e[t >= t1 + 1.0].max(initial=0.0)
        print(f"observer {'on ' if obs else 'off'}: max {e.max() * 1e3:.1f} mm, during {during * 1e3:.1f} mm, "
              f"1 s after {after * 1e3:.1f} mm, integrated {log.integrated_error():.4f} m s"
              + (f", fault {log.fault}" if log.fault else ""))
        if args.out:
            d = args.out / ("observer" if obs else "no_observer")
            d.mkdir(parents=True, exist_ok=True)
            log.to_csv(d / "track.csv")
            emit_plots(log, d)


if __name__ == "__main__":
    main()
