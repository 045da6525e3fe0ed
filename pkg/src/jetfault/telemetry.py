"""Telemetry files, run metrics and repeat summaries.

A telemetry CSV starts with one ``# {json}`` line holding the run header,
followed by a plain CSV header row and one row per control tick. Numbers are
written with a fixed format so identical runs give identical bytes.
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .simulator import TELEMETRY_VERSION, TelemetryLog

FLOAT_FORMAT = "%.10g"
SUMMARY_VERSION = 1


class SchemaError(ValueError):
    pass


def _fmt(x):
    if np.isnan(x):
        return "nan"
    return FLOAT_FORMAT % x


def dumps(log):
    buf = io.StringIO()
    buf.write("# " + json.dumps(log.header, sort_keys=True) + "\n")
    buf.write(",".join(log.columns) + "\n")
    for row in log.rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_telemetry(path, log):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # newline="" keeps "\n" on every platform
    with open(path, "w", newline="") as fh:
        fh.write(dumps(log))
    return path


def read_telemetry(path):
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise SchemaError(f"{path}: missing JSON header line")
        try:
            header = json.loads(first[2:])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: bad header ({exc.msg})") from None
        if header.get("format") != "jetfault-telemetry":
            raise SchemaError(f"{path}: not a telemetry file")
        if header.get("version") != TELEMETRY_VERSION:
            raise SchemaError(f"{path}: telemetry version {header.get('version')} != {TELEMETRY_VERSION}")
        reader = csv.reader(fh)
        columns = next(reader, None)
        if not columns or columns[0] != "t":
            raise SchemaError(f"{path}: missing column row")
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return TelemetryLog(header, columns, data, bool(header.get("aborted")), header.get("abort_reason", ""))


# --------------------------------------------------------------------------
# metrics


def detection_time(log):
    states = log.columns_matching("state_")
    hit = np.flatnonzero((states >= 1).any(axis=1))
    return float(log.column("t")[hit[0]]) if len(hit) else None


def hover_window_end(log, t_from):
    """Start of the first scripted segment after ``t_from`` (end of run if none)."""
    starts = [seg["start"] for seg in log.header["scenario"]["segments"] if seg["start"] > t_from]
    return min(starts) if starts else float(log.column("t")[-1])


def recovery_time(log, threshold, t_detect=None):
    """Settling time of the momentum error norm after detection.

    Seconds from detection until the norm drops below ``threshold`` and stays
    there for the rest of the post-fault hover (up to the next scripted move).
    None if it never settles inside that window.
    """
    t_detect = detection_time(log) if t_detect is None else t_detect
    if t_detect is None:
        return None
    t = log.column("t")
    e = log.column("momentum_error_norm")
    win = (t >= t_detect - 1e-9) & (t <= hover_window_end(log, t_detect) + 1e-9)
    tw, ew = t[win], e[win]
    above = np.flatnonzero(~(ew < threshold))
    if len(above) == 0:
        return 0.0
    if above[-1] == len(tw) - 1:
        return None
    return float(tw[above[-1] + 1] - t_detect)


def momentum_error_integral(log):
    t, e = log.column("t"), log.column("momentum_error_norm")
    return float(np.sum(0.5 * (e[1:] + e[:-1]) * np.diff(t)))


def window_maxima(t, x, t0, t1, width=1.0):
    edges = np.arange(max(t0, t[0]), t1 + 1e-9, width)
    bins = [x[(t >= a) & (t < b + 1e-9)] for a, b in zip(edges[:-1], edges[1:])]
    return np.array([b.max() for b in bins if len(b)])


def joint_error_bounded(log, span=10.0, width=1.0):
    """True unless the per-second maxima of the joint error norm grow monotonically over the final ``span`` s."""
    t, e = log.column("t"), log.column("joint_error_norm")
    if not np.all(np.isfinite(e)):
        return False
    m = window_maxima(t, e, t[-1] - span, t[-1], width)
    if len(m) < 2:
        return True
    growing = np.all(np.diff(m) >= 0.0) and m[-1] > m[0]
    return not bool(growing)


def final_tracking_error(log):
    com = log.columns_matching("com_")[:, :3]
    ref = log.columns_matching("com_ref_")
    return float(np.linalg.norm(com[-1] - ref[-1]))


@dataclass
class RunMetrics:
    seed: int
    completed: bool
    duration: float
    detection_time: object
    recovery_time: object
    momentum_error_integral: float
    max_momentum_error: float
    max_joint_error: float
    joint_error_bounded: bool
    final_com_error: float
    qp_failures: int

    def to_dict(self):
        return dict(vars(self))


def run_metrics(log, threshold=None, completion_tol=0.25):
    """``completed`` means no abort, full duration, and the CoM within ``completion_tol`` m of its final reference."""
    t = log.column("t")
    duration = log.header["scenario"]["duration"]
    full = not log.aborted and abs(t[-1] - duration) < 1e-6
    com_err = final_tracking_error(log)
    rec = recovery_time(log, threshold) if threshold is not None else None
    return RunMetrics(
        seed=int(log.header["seed"]),
        completed=bool(full and com_err <= completion_tol),
        duration=float(t[-1]),
        detection_time=detection_time(log),
        recovery_time=rec,
        momentum_error_integral=momentum_error_integral(log),
        max_momentum_error=float(np.nanmax(log.column("momentum_error_norm"))),
        max_joint_error=float(np.nanmax(log.column("joint_error_norm"))),
        joint_error_bounded=joint_error_bounded(log),
        final_com_error=com_err,
        qp_failures=int(np.nansum(log.column("qp_failed"))),
    )


# --------------------------------------------------------------------------
# summaries over repeats

ENVELOPE_SIGNALS = ("momentum_error_norm", "joint_error_norm")


def check_compatible(logs):
    if not logs:
        raise SchemaError("empty run set")
    cols = logs[0].columns
    for lg in logs[1:]:
        if lg.columns != cols:
            raise SchemaError("runs have different column sets")
    return cols


def envelopes(logs, signals=ENVELOPE_SIGNALS):
    """Per-tick mean and max over runs; shorter (aborted) runs only cover their own ticks.

    Returns (t, {signal: (mean, max)}).
    """
    check_compatible(logs)
    longest = max(logs, key=lambda lg: len(lg.rows))
    t = longest.column("t")
    out = {}
    for name in signals:
        stack = np.full((len(logs), len(t)), np.nan)
        for i, lg in enumerate(logs):
            x = lg.column(name)
            stack[i, : len(x)] = x
        with np.errstate(invalid="ignore"):
            out[name] = (np.nanmean(stack, axis=0), np.nanmax(stack, axis=0))
    return t, out


def write_envelope_csv(path, t, env):
    names = list(env)
    cols = ["t"] + [f"{n}_{k}" for n in names for k in ("mean", "max")]
    data = np.column_stack([t] + [a for n in names for a in env[n]])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def summarize(logs, threshold=None):
    metrics = [run_metrics(lg, threshold) for lg in logs]
    integrals = np.array([m.momentum_error_integral for m in metrics])
    rec = [m.recovery_time for m in metrics]
    return {
        "format": "jetfault-summary",
        "version": SUMMARY_VERSION,
        "scenario": logs[0].header["scenario"]["name"],
        "with_refgen": logs[0].header["with_refgen"],
        "hover_threshold": threshold,
        "runs": [m.to_dict() for m in metrics],
        "all_completed": all(m.completed for m in metrics),
        "mean_momentum_error_integral": float(integrals.mean()),
        "max_recovery_time": None if any(r is None for r in rec) or not rec else max(rec),
    }
