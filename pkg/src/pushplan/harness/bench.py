"""Benchmark runner: plan per (family, seed, arm), one CSV row per trial plus a summary table."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

from ..planner import PlanParams, plan
from .generators import generate_scene
from .metrics import detour_lower_bound, mean_std, quartiles, straight_distance

# values plotted for failed trials
CENSOR_TIME = 130.0
CENSOR_LENGTH = 2.0

ARMS = ("ca3p", "no-contact")
TRIAL_COLUMNS = ("family", "seed", "arm", "success", "nodes_in_tree", "iterations", "path_length_m",
                 "straight_m", "detour_lb_m", "planning_time_s", "error")
WALL_TIME_COLUMNS = ("planning_time_s",)
SUMMARY_COLUMNS = ("family", "arm", "trials", "successes", "success_rate", "nodes_mean", "nodes_std",
                   "time_q1", "time_median", "time_q3", "length_q1", "length_median", "length_q3")


@dataclass(frozen=True)
class Trial:
    family: int
    seed: int
    arm: str
    success: bool
    nodes_in_tree: int
    iterations: int
    path_length_m: float  # censored to CENSOR_LENGTH on failure
    straight_m: float
    detour_lb_m: float
    planning_time_s: float  # censored to CENSOR_TIME on failure
    error: str = ""

    def row(self, wall_time: bool = True) -> dict:
        d = asdict(self)
        d["success"] = int(self.success)
        if not wall_time:
            for c in WALL_TIME_COLUMNS:
                d.pop(c)
        return d


def run_trial(family: int, seed: int, params: PlanParams, arm: str = "ca3p") -> Trial:
    """One planning run. Any exception is recorded as a failed trial."""
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}")
    try:
        scene = generate_scene(family, seed)
        p = replace(params, seed=seed, contact_enabled=(arm == "ca3p"))
        res = plan(scene.task(p))
        straight, detour = straight_distance(scene), detour_lower_bound(scene)
        st = res.stats
        if res.success:
            return Trial(family, seed, arm, True, st["nodes_in_tree"], st["iterations"], st["path_length_m"],
                         straight, detour, st["wall_time"])
        return Trial(family, seed, arm, False, st["nodes_in_tree"], st["iterations"], CENSOR_LENGTH,
                     straight, detour, CENSOR_TIME)
    except Exception as e:  # noqa: BLE001 - a trial never aborts the batch
        return Trial(family, seed, arm, False, 0, 0, CENSOR_LENGTH, math.nan, math.nan, CENSOR_TIME,
                     f"{type(e).__name__}: {e}"[:200])


def _run(args) -> Trial:
    return run_trial(*args)


def workers(parallelism: int | None = None) -> int:
    """Worker count: the request (default: CPU count) capped by PUSHPLAN_THREADS."""
    n = parallelism or os.cpu_count() or 1
    cap = os.environ.get("PUSHPLAN_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


@dataclass
class BenchReport:
    trials: list = field(default_factory=list)

    def select(self, family=None, arm=None) -> list:
        return [t for t in self.trials if (family is None or t.family == family) and (arm is None or t.arm == arm)]

    def summary(self) -> list[dict]:
        out = []
        for fam, arm in sorted({(t.family, t.arm) for t in self.trials}):
            ts = self.select(fam, arm)
            nodes = mean_std(t.nodes_in_tree for t in ts)
            tq = quartiles(t.planning_time_s for t in ts)
            lq = quartiles(t.path_length_m for t in ts)
            ok = sum(t.success for t in ts)
            out.append({"family": fam, "arm": arm, "trials": len(ts), "successes": ok,
                        "success_rate": ok / len(ts), "nodes_mean": nodes[0], "nodes_std": nodes[1],
                        "time_q1": tq[0], "time_median": tq[1], "time_q3": tq[2],
                        "length_q1": lq[0], "length_median": lq[1], "length_q3": lq[2]})
        return out

    def write_csv(self, path, wall_time: bool = True) -> None:
        cols = [c for c in TRIAL_COLUMNS if wall_time or c not in WALL_TIME_COLUMNS]
        _write(path, cols, (t.row(wall_time) for t in self.trials))

    def write_summary(self, path) -> None:
        _write(path, SUMMARY_COLUMNS, self.summary())


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def _write(path, cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(cols), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def bench(families, seeds, params: PlanParams | None = None, ablation: bool = False,
          parallelism: int | None = None) -> BenchReport:
    """Plan every (family, seed), plus the contact-disabled arm when ablation is set.

    Trials are independent; rows come back sorted by (family, arm, seed) whatever the
    completion order.
    """
    params = params or PlanParams()
    arms = ARMS if ablation else ARMS[:1]
    jobs = [(f, s, params, a) for f in families for a in arms for s in seeds]
    n = min(workers(parallelism), max(1, len(jobs)))
    if n == 1:
        trials = [_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            trials = list(ex.map(_run, jobs))
    trials.sort(key=lambda t: (t.family, ARMS.index(t.arm), t.seed))
    return BenchReport(trials)
