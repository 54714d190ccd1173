"""Command line entry point: `pushplan <subcommand> ...`.

Exit codes: 0 success, 2 planning failure, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..control import MpcConfig, track
from ..planner import PlanParams, plan
from ..simulator import DisturbanceSchedule, Plant, replay_plan, write_log
from .bench import bench
from .generators import FAMILIES, generate_scene
from .plots import emit_plots
from .scene import ParseError, ValidationError, dumps, load_scene, save_scene

EXIT_OK, EXIT_PLAN_FAILED, EXIT_INPUT = 0, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's own exit status 2 would read as a planning failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def plan_rows(result, tau_lqr: float):
    """Planned trajectory in the shared log format; events mark tree nodes and face switches."""
    switches = {k for k, _ in result.face_switches}
    nodes = set(result.node_steps)
    for k, x in enumerate(result.states):
        u = result.controls[k].as_array() if k < len(result.controls) else (0.0, 0.0, 0.0)
        ev = [e for e, on in (("node", k in nodes), ("switch", k in switches)) if on]
        yield [k * tau_lqr, *map(float, x), *map(float, u), 0.0, 0.0, 0.0, 0.0, 0.0, "|".join(ev)]


def _scene(args):
    if args.scene and args.family is not None:
        raise InputError("give either --scene or --family")
    if args.scene:
        return load_scene(args.scene)
    if args.family is not None:
        return generate_scene(args.family, args.seed)
    raise InputError("one of --scene or --family is required")


def _params(args) -> PlanParams:
    kw = {"seed": args.seed, "n_max": args.n_max, "contact_enabled": args.ablation != "no-contact"}
    if args.tau is not None:
        kw["tau"] = args.tau
    try:
        return PlanParams(**kw)
    except ValueError as e:
        raise InputError(str(e)) from None


def _plan(args):
    scene = _scene(args)
    params = _params(args)
    res = plan(scene.task(params))
    stats = {k: v for k, v in res.stats.items() if k != "rejections"}
    print(json.dumps({"success": res.success, **stats}, sort_keys=True))
    return scene, params, res


def cmd_plan(args) -> int:
    _, params, res = _plan(args)
    if args.out and res.success:
        write_log(args.out, plan_rows(res, params.tau_lqr))
    return EXIT_OK if res.success else EXIT_PLAN_FAILED


def cmd_track(args) -> int:
    scene, _, res = _plan(args)
    if not res.success:
        return EXIT_PLAN_FAILED
    schedule = None
    if args.disturbance:
        fx, fy, t0, t1 = args.disturbance
        schedule = DisturbanceSchedule.force(scene.slider, t0, t1, (fx, fy), scene.x0.pose.theta)
    cfg = MpcConfig(observer=not args.no_observer)
    log = track(scene.slider, res, Plant.from_scene(scene), cfg, schedule)
    e = log.error_norm
    print(json.dumps({"max_error_m": float(e.max()) if len(e) else 0.0, "integrated_error": log.integrated_error(),
                      "diverged": log.diverged, "fault": log.fault}, sort_keys=True))
    if args.out:
        log.to_csv(args.out)
    if args.plots:
        emit_plots(log, args.plots)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scene, _, res = _plan(args)
    if not res.success:
        return EXIT_PLAN_FAILED
    log = replay_plan(Plant.from_scene(scene), res)
    print(json.dumps({"steps": len(log.inputs), "fault": log.fault}, sort_keys=True))
    if args.out:
        log.to_csv(args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if any(f not in FAMILIES for f in args.families):
        raise InputError(f"families must be in {FAMILIES}")
    params = _params(args)
    seeds = range(args.seed, args.seed + args.seeds)
    report = bench(args.families, seeds, params, ablation=args.ablation == "no-contact", parallelism=args.jobs)
    for row in report.summary():
        print(json.dumps(row, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "bench.csv")
        report.write_csv(out / "bench_nowall.csv", wall_time=False)
        emit_plots(report, out)
    return EXIT_OK


def cmd_scene_gen(args) -> int:
    scene = generate_scene(args.family, args.seed)
    if args.out:
        save_scene(scene, args.out)
    else:
        print(dumps(scene))
    return EXIT_OK


def cmd_validate(args) -> int:
    load_scene(args.scene)
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pushplan", description="Contact-aware push planning, tracking and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def planning(sp):
        sp.add_argument("--scene", help="scene JSON file")
        sp.add_argument("--family", type=int, choices=FAMILIES, help="generate the scene instead")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--n-max", type=int, default=1000)
        sp.add_argument("--tau", type=float, help="reachable-set step (s), a multiple of 0.01")
        sp.add_argument("--ablation", choices=["no-contact"], help="disable movable-obstacle interaction")
        sp.add_argument("--out")

    sp = sub.add_parser("plan", help="plan and write the trajectory CSV")
    planning(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("track", help="plan, then track the plan in closed loop")
    planning(sp)
    sp.add_argument("--disturbance", type=float, nargs=4, metavar=("FX", "FY", "T0", "T1"),
                    help="constant force (N) on the slider over [T0, T1) s")
    sp.add_argument("--no-observer", action="store_true")
    sp.add_argument("--plots", help="directory for tracking-error CSVs")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("simulate", help="plan, then replay the controls open loop")
    planning(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", help="benchmark over scene families and seeds")
    sp.add_argument("--families", type=int, nargs="+", default=list(FAMILIES))
    sp.add_argument("--seeds", type=int, default=10, help="number of seeds")
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--n-max", type=int, default=1000)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--ablation", choices=["no-contact"], help="also run the contact-disabled arm")
    sp.add_argument("--jobs", type=int, help="worker processes (capped by PUSHPLAN_THREADS)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("scene-gen", help="write a generated scene as JSON")
    sp.add_argument("--family", type=int, choices=FAMILIES, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_scene_gen)

    sp = sub.add_parser("validate", help="check a scene file")
    sp.add_argument("--scene", required=True)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ParseError, ValidationError, InputError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
