"""Tidy CSV behind the benchmark box plots and the tracking-error curves. No drawing here."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..control import TrackLog
from .bench import BenchReport

TRIALS_FILE = "trials.csv"
SUMMARY_FILE = "summary.csv"
ERROR_FILE = "tracking_error.csv"
ANNOTATION_FILE = "annotations.csv"

ERROR_COLUMNS = ("t", "err_x", "err_y", "err_norm")
ANNOTATION_COLUMNS = ("type", "t_start", "t_end")
# tidy long format: one (trial, metric, value) per row
METRIC_COLUMNS = ("family", "seed", "arm", "metric", "value")
METRICS = ("success", "nodes_in_tree", "path_length_m", "planning_time_s")


class IoError(OSError):
    pass


def annotations(log: TrackLog) -> list[tuple[str, float, float]]:
    """Face switches as instants, contact as merged [t_start, t_end) intervals."""
    out = []
    times = list(log.times)
    ends = [t + dt for t, dt in zip(times, log.dts)] if log.dts else times[1:] + times[-1:]
    start = None
    for t, t_end, ev in zip(times, ends, log.events):
        if "switch" in ev:
            out.append(("switch", t, t))
        if "contact" in ev:
            if start is None:
                start = t
            last_end = t_end
        elif start is not None:
            out.append(("contact", start, last_end))
            start = None
    if start is not None:
        out.append(("contact", start, last_end))
    out.sort(key=lambda r: (r[1], r[0]))
    return out


def _write(path: Path, cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])


def _metric_rows(report: BenchReport):
    for t in report.trials:
        r = t.row()
        for m in METRICS:
            yield (t.family, t.seed, t.arm, m, float(r[m]))


def emit_plots(obj, out_dir) -> list[Path]:
    """Write plot data for a BenchReport or a TrackLog into out_dir; returns the files written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if isinstance(obj, BenchReport):
            files = [out / TRIALS_FILE, out / SUMMARY_FILE]
            _write(files[0], METRIC_COLUMNS, _metric_rows(obj))
            obj.write_summary(files[1])
            return files
        if isinstance(obj, TrackLog):
            files = [out / ERROR_FILE, out / ANNOTATION_FILE]
            e = obj.error
            rows = [(float(t), float(x), float(y), float(np.hypot(x, y))) for t, (x, y) in zip(obj.times, e)]
            _write(files[0], ERROR_COLUMNS, rows)
            _write(files[1], ANNOTATION_COLUMNS, annotations(obj))
            return files
    except OSError as e:
        raise IoError(str(e)) from e
    raise TypeError("expected a BenchReport or a TrackLog")


def read_table(path) -> list[dict]:
    """Read back any CSV written here; numeric columns come back as floats."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = float(v)
            except ValueError:
                pass
    return rows

