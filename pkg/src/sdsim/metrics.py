"""Evaluation metrics computed from an event log.

Slowdown is response time over the job's static runtime (``base_runtime``),
unbounded unless a bounding threshold is asked for.  Days are 86400-second
windows counted from the first submission.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .errors import SimError

DAY = 86400
HOUR = 3600

NODE_BUCKETS: tuple[tuple[int, float], ...] = ((1, 2), (3, 8), (9, 32), (33, 128), (129, 512), (513, math.inf))
RUNTIME_BUCKETS: tuple[tuple[float, float], ...] = (
    (0, 1 * HOUR), (1 * HOUR, 4 * HOUR), (4 * HOUR, 12 * HOUR), (12 * HOUR, 24 * HOUR), (24 * HOUR, math.inf),
)


class IncompleteLogError(SimError):
    pass


@dataclass(frozen=True)
class JobRecord:
    job_id: int
    submit: int
    start: int
    end: int
    nodes: int
    base_runtime: int
    malleable_start: bool

    @property
    def wait(self) -> int:
        return self.start - self.submit

    @property
    def response(self) -> int:
        return self.end - self.submit

    @property
    def runtime(self) -> int:
        return self.end - self.start

    def slowdown(self, bound: float | None = None) -> float:
        if bound is None:
            return self.response / self.base_runtime
        return max(self.response / max(self.base_runtime, bound), 1.0)


@dataclass
class DayStats:
    day: int
    completed: int
    avg_slowdown: float | None
    malleable_starts: int


@dataclass
class SimReport:
    jobs: int
    makespan: int
    avg_response_time: float
    avg_wait_time: float
    avg_slowdown: float
    malleable_starts: int
    mate_jobs: int
    shrinks: int
    expands: int
    daily: list[DayStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def scalars(self) -> dict:
        d = self.to_dict()
        d.pop("daily")
        return d


def job_records(log: Iterable[dict]) -> list[JobRecord]:
    """One record per job, in job-id order; raises if any job did not finish."""
    submits, starts, ends, mall = {}, {}, {}, set()
    for rec in log:
        ev = rec["ev"]
        if ev == "submit":
            submits[rec["job"]] = rec
        elif ev == "start":
            starts[rec["job"]] = rec["t"]
        elif ev == "malleable_start":
            starts[rec["job"]] = rec["t"]
            mall.add(rec["job"])
        elif ev == "complete":
            ends[rec["job"]] = rec["t"]
    missing = sorted(set(submits) - set(ends))
    if missing:
        raise IncompleteLogError(f"{len(missing)} submitted jobs never completed (first: {missing[0]})")
    out = []
    for job_id in sorted(submits):
        s = submits[job_id]
        out.append(JobRecord(job_id, s["t"], starts[job_id], ends[job_id], s["nodes"], s["runtime"],
                             job_id in mall))
    return out


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def summarize(log: Iterable[dict], bounded_slowdown: float | None = None) -> SimReport:
    log = list(log)
    recs = job_records(log)
    if not recs:
        raise IncompleteLogError("log contains no jobs")
    first = min(r.submit for r in recs)
    mates = set()
    counts = {"shrink": 0, "expand": 0, "malleable_start": 0}
    for rec in log:
        if rec["ev"] in counts:
            counts[rec["ev"]] += 1
        if rec["ev"] == "malleable_start":
            mates.update(rec["mates"])
    return SimReport(
        jobs=len(recs),
        makespan=max(r.end for r in recs) - first,
        avg_response_time=_mean([r.response for r in recs]),
        avg_wait_time=_mean([r.wait for r in recs]),
        avg_slowdown=_mean([r.slowdown(bounded_slowdown) for r in recs]),
        malleable_starts=counts["malleable_start"],
        mate_jobs=len(mates),
        shrinks=counts["shrink"],
        expands=counts["expand"],
        daily=daily_series(log, bounded_slowdown),
    )


def daily_series(log: Iterable[dict], bounded_slowdown: float | None = None) -> list[DayStats]:
    """Average slowdown of the jobs completing each day and malleable starts per day."""
    log = list(log)
    recs = job_records(log)
    if not recs:
        return []
    first = min(r.submit for r in recs)
    last_day = (max(r.end for r in recs) - first) // DAY
    done: dict[int, list[float]] = {}
    for r in recs:
        done.setdefault((r.end - first) // DAY, []).append(r.slowdown(bounded_slowdown))
    starts: dict[int, int] = {}
    for rec in log:
        if rec["ev"] == "malleable_start":
            d = (rec["t"] - first) // DAY
            starts[d] = starts.get(d, 0) + 1
    return [
        DayStats(d, len(done.get(d, ())), _mean(done[d]) if d in done else None, starts.get(d, 0))
        for d in range(last_day + 1)
    ]


def node_bucket(nodes: int, buckets=NODE_BUCKETS) -> int:
    for i, (lo, hi) in enumerate(buckets):
        if lo <= nodes <= hi:
            return i
    raise ValueError(f"node count {nodes} falls outside every bucket")


def runtime_bucket(seconds: int, buckets=RUNTIME_BUCKETS) -> int:
    """Buckets are (lo, hi]; the first one also takes its lower edge."""
    for i, (lo, hi) in enumerate(buckets):
        if lo < seconds <= hi or (i == 0 and seconds == lo):
            return i
    raise ValueError(f"runtime {seconds} falls outside every bucket")


@dataclass
class Cell:
    count: int
    slowdown: float | None
    runtime: float | None
    wait: float | None


@dataclass
class Heatmap:
    node_buckets: tuple
    runtime_buckets: tuple
    # [node bucket][runtime bucket]
    cells: list[list[Cell]]

    def rows(self) -> list[dict]:
        out = []
        for i, nb in enumerate(self.node_buckets):
            for j, rb in enumerate(self.runtime_buckets):
                c = self.cells[i][j]
                out.append({"nodes": _label(nb), "runtime_s": _label(rb), "jobs": c.count,
                            "slowdown_ratio": c.slowdown, "runtime_ratio": c.runtime, "wait_ratio": c.wait})
        return out


def _label(bucket) -> str:
    lo, hi = bucket
    return f"{lo:g}+" if math.isinf(hi) else f"{lo:g}-{hi:g}"


def cell_averages(recs: Sequence[JobRecord], node_buckets=NODE_BUCKETS, runtime_buckets=RUNTIME_BUCKETS,
                  bounded_slowdown: float | None = None):
    """Per-cell lists of (slowdown, runtime, wait) for one run."""
    grid = [[[] for _ in runtime_buckets] for _ in node_buckets]
    for r in recs:
        grid[node_bucket(r.nodes, node_buckets)][runtime_bucket(r.base_runtime, runtime_buckets)].append(
            (r.slowdown(bounded_slowdown), r.runtime, r.wait))
    return grid


def _ratio(a: float, b: float) -> float | None:
    if b == 0:
        return 1.0 if a == 0 else None
    return a / b


def heatmap(log: Iterable[dict], baseline_log: Iterable[dict], node_buckets=NODE_BUCKETS,
            runtime_buckets=RUNTIME_BUCKETS, bounded_slowdown: float | None = None) -> Heatmap:
    """Per-category ratios baseline / this run for slowdown, runtime and wait.

    Cells without jobs hold None.  A zero-over-zero ratio (e.g. no waiting in
    either run) counts as 1.
    """
    recs, base = job_records(log), job_records(baseline_log)
    if [r.job_id for r in recs] != [r.job_id for r in base]:
        raise ValueError("logs cover different job sets")
    grid = cell_averages(recs, node_buckets, runtime_buckets, bounded_slowdown)
    bgrid = cell_averages(base, node_buckets, runtime_buckets, bounded_slowdown)
    cells = []
    for row, brow in zip(grid, bgrid):
        out = []
        for vals, bvals in zip(row, brow):
            if not vals:
                out.append(Cell(0, None, None, None))
                continue
            means = [_mean([v[k] for v in vals]) for k in range(3)]
            bmeans = [_mean([v[k] for v in bvals]) for k in range(3)]
            out.append(Cell(len(vals), *(_ratio(b, a) for b, a in zip(bmeans, means))))
        cells.append(out)
    return Heatmap(tuple(node_buckets), tuple(runtime_buckets), cells)


# -- files ---------------------------------------------------------------

def write_report_json(path, report: SimReport, extra: dict | None = None) -> None:
    data = report.to_dict()
    if extra:
        data.update(extra)
    with open(path, "w") as fp:
        json.dump(data, fp, indent=2, sort_keys=True)
        fp.write("\n")


def write_report_csv(path, report: SimReport, extra: dict | None = None) -> None:
    rows = dict(report.scalars())
    if extra:
        rows.update(extra)
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["metric", "value"])
        for k in sorted(rows):
            w.writerow([k, rows[k]])


def write_daily_csv(path, daily: Sequence[DayStats]) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["day", "completed", "avg_slowdown", "malleable_starts"])
        for d in daily:
            w.writerow([d.day, d.completed, "" if d.avg_slowdown is None else d.avg_slowdown, d.malleable_starts])


def write_heatmap_csv(path, hm: Heatmap) -> None:
    rows = hm.rows()
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
