"""Process-aware evaluation metrics: peak and average grip / applied force,
success rate and data retention.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

CONTACT_THRESHOLD = 0.1
TOP_FRACTION = 0.05

CSV_COLUMNS = ("task", "level", "n", "Ratio", "Max Steps", "AG", "AA", "MG", "MA", "SR", "episodes")
CSV_NOTE = "# force metrics: per-episode values averaged over successful episodes; n = successes"


class ShapeError(ValueError):
    pass


class UndefinedRateError(ZeroDivisionError):
    pass


class EmptySeriesWarning(UserWarning):
    pass


def max_transient(series, q=TOP_FRACTION):
    """Mean of the ``ceil(q * len)`` largest samples (at least one)."""
    values = np.asarray(series, dtype=float).ravel()
    if values.size == 0:
        warnings.warn("empty series; max transient defaults to 0", EmptySeriesWarning, stacklevel=2)
        return 0.0
    k = max(1, math.ceil(q * values.size))
    top = np.sort(values)[-k:]
    return float(top.sum() / k)


def avg_during_contact(series, contact_mask):
    values = np.asarray(series, dtype=float).ravel()
    mask = np.asarray(contact_mask, dtype=bool).ravel()
    if values.shape != mask.shape:
        raise ShapeError(f"series length {values.size} != mask length {mask.size}")
    n = int(mask.sum())
    if n == 0:
        return 0.0
    return float(values[mask].sum() / n)


def retention_rate(n_success, n_total):
    if n_total <= 0:
        raise UndefinedRateError("retention rate undefined for an empty cell")
    if not 0 <= n_success <= n_total:
        raise ValueError(f"successes {n_success} outside [0, {n_total}]")
    return n_success / n_total * 100.0


def episode_metrics(grip, applied_mag, threshold=CONTACT_THRESHOLD):
    grip = np.asarray(grip, dtype=float)
    applied_mag = np.asarray(applied_mag, dtype=float)
    contact = grip > threshold
    return {
        "AG": avg_during_contact(grip, contact),
        "MG": max_transient(grip),
        "AA": avg_during_contact(applied_mag, contact),
        "MA": max_transient(applied_mag),
        "contact_steps": int(contact.sum()),
    }


@dataclass
class MetricsSummary:
    task: str
    level: int
    episodes: int
    n: int
    sr: float
    ag: float | None
    mg: float | None
    aa: float | None
    ma: float | None
    max_steps: int | None

    @property
    def ratio(self):
        return retention_rate(self.n, self.episodes) if self.episodes else None


def _log_parts(log):
    header = log.header if hasattr(log, "header") else log["header"]
    summary = log.summary if hasattr(log, "summary") else log["summary"]
    return header, summary


def summarize(logs, groups=None):
    """Aggregate episodes into task x force-level cells.

    Success rate counts every episode; force metrics average the per-episode
    values of successful episodes only.  ``groups`` lists cells that must be
    reported even when empty.
    """
    cells = {}
    for log in logs:
        header, summary = _log_parts(log)
        key = (header["task_id"], int(header["force_level"]))
        cells.setdefault(key, []).append(summary)
    for key in groups or ():
        cells.setdefault((key[0], int(key[1])), [])
    rows = []
    for key in sorted(cells):
        eps = cells[key]
        ok = [s for s in eps if s["success"]]
        if ok:
            agg = {m: float(np.mean([s["metrics"][m] for s in ok])) for m in ("AG", "MG", "AA", "MA")}
            max_steps = max(s["n_steps"] for s in ok)
        else:
            agg = dict.fromkeys(("AG", "MG", "AA", "MA"))
            max_steps = None
        rows.append(MetricsSummary(
            task=key[0], level=key[1], episodes=len(eps), n=len(ok),
            sr=len(ok) / len(eps) if eps else 0.0,
            ag=agg["AG"], mg=agg["MG"], aa=agg["AA"], ma=agg["MA"], max_steps=max_steps))
    return rows


def _fmt(v, digits=3):
    return "--" if v is None else f"{v:.{digits}f}"


def to_csv(rows):
    buf = io.StringIO()
    buf.write(CSV_NOTE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        if r.n == 0:
            ratio = "0.0" if r.episodes else "--"
            w.writerow([r.task, r.level, 0, ratio, 0, "--", "--", "--", "--",
                        _fmt(r.sr, 2) if r.episodes else "--", r.episodes])
        else:
            w.writerow([r.task, r.level, r.n, f"{r.ratio:.1f}", r.max_steps,
                        _fmt(r.ag), _fmt(r.aa), _fmt(r.mg), _fmt(r.ma), _fmt(r.sr, 2), r.episodes])
    return buf.getvalue()


def _num(s, cast=float):
    return None if s == "--" else cast(s)


def from_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for rec in reader:
        n = int(rec["n"])
        episodes = int(rec["episodes"])
        rows.append(MetricsSummary(
            task=rec["task"], level=int(rec["level"]), episodes=episodes, n=n,
            sr=_num(rec["SR"]) or 0.0,
            ag=_num(rec["AG"]), mg=_num(rec["MG"]), aa=_num(rec["AA"]), ma=_num(rec["MA"]),
            max_steps=_num(rec["Max Steps"], int) if n else None))
    return rows
