"""Progress of jobs whose per-node core counts change while they run.

Work is tracked in integer units: a job whose full static allocation has
``req_cpus`` cores completes ``req_cpus`` units per second at full speed, so
its total work is ``base_runtime * req_cpus`` units.  The per-second rate
under a configuration is

* ideal:      sum of assigned cores over its nodes
* worst case: node count * fewest cores on any node

which both equal ``req_cpus`` at full allocation.  Keeping everything integer
makes completion instants exact and runs reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import ModelError


class ModelKind(str, enum.Enum):
    IDEAL = "ideal"
    WORST_CASE = "worst"

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, cls):
            return value
        aliases = {"ideal": cls.IDEAL, "worst": cls.WORST_CASE, "worst_case": cls.WORST_CASE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ModelError(f"unknown runtime model {value!r} (use ideal or worst)") from None


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def rate_units(counts: Iterable[int], model: ModelKind) -> int:
    counts = list(counts)
    if not counts or min(counts) < 1:
        raise ModelError(f"every allocated node needs at least one core, got {counts}")
    if model is ModelKind.IDEAL:
        return sum(counts)
    return len(counts) * min(counts)


@dataclass
class ExecutionState:
    job_id: int
    start_time: int
    base_runtime: int
    req_cpus: int
    counts: dict[int, int]
    model: ModelKind = ModelKind.IDEAL
    done: int = 0
    config_since: int = -1
    history: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        if self.config_since < 0:
            self.config_since = self.start_time
        self._rate = rate_units(self.counts.values(), self.model)

    @property
    def total(self) -> int:
        return self.base_runtime * self.req_cpus

    @property
    def rate(self) -> int:
        return self._rate

    @property
    def work_done(self) -> Fraction:
        return Fraction(min(self.done, self.total), self.total)

    def done_at(self, now: int) -> int:
        """Work units completed by ``now`` assuming no reconfiguration."""
        return min(self.total, self.done + (now - self.config_since) * self._rate)

    def sync(self, now: int) -> None:
        """Bring accumulated work up to ``now`` and close the current slot."""
        dt = now - self.config_since
        if dt < 0:
            raise ModelError(f"job {self.job_id}: clock went backwards ({now} < {self.config_since})")
        if dt:
            self.done = min(self.total, self.done + dt * self._rate)
            self.history.append((dt, tuple(self.counts[n] for n in sorted(self.counts))))
            self.config_since = now

    def reconfigure(self, now: int, counts: Mapping[int, int]) -> None:
        if set(counts) != set(self.counts):
            raise ModelError(f"job {self.job_id}: reconfiguration changes its node set")
        self.sync(now)
        self.counts = dict(counts)
        self._rate = rate_units(self.counts.values(), self.model)

    def end_time(self) -> int:
        """Completion instant under the current configuration."""
        return self.config_since + remaining_time(self)


def progress_rate(exec_state: ExecutionState, model: ModelKind | None = None) -> Fraction:
    model = exec_state.model if model is None else model
    return Fraction(rate_units(exec_state.counts.values(), model), exec_state.req_cpus)


def advance(exec_state: ExecutionState, dt: int, model: ModelKind | None = None) -> Fraction:
    """Run ``exec_state`` for ``dt`` seconds under its current configuration."""
    if dt < 0:
        raise ModelError("dt must be non-negative")
    if model is not None and model is not exec_state.model:
        exec_state.model = model
        exec_state._rate = rate_units(exec_state.counts.values(), model)
    exec_state.sync(exec_state.config_since + dt)
    return exec_state.work_done


def remaining_time(exec_state: ExecutionState) -> int:
    left = exec_state.total - exec_state.done
    if left <= 0:
        return 0
    return ceil_div(left, exec_state.rate)


def elapsed_for_work(work: int, timeline: Sequence[tuple[int, int]], full_rate: int) -> int:
    """Seconds needed to finish ``work`` units through ``timeline``.

    ``timeline`` holds (duration, rate units) slots; whatever is left after
    the last slot runs at ``full_rate``.
    """
    elapsed = 0
    for duration, rate in timeline:
        if work <= 0:
            return elapsed
        chunk = duration * rate
        if work <= chunk:
            return elapsed + ceil_div(work, rate)
        work -= chunk
        elapsed += duration
    if work > 0:
        elapsed += ceil_div(work, full_rate)
    return elapsed


def predict_increase(job, timeline: Sequence[tuple[int, Mapping[int, int] | Sequence[int]]],
                     model: ModelKind, cores_per_node: int) -> int:
    """Extra seconds beyond ``job.requested_time`` for the given shrink timeline.

    Each slot is (wall duration, per-node core counts).  Work beyond the end
    of the timeline runs at full speed.
    """
    req_cpus = job.requested_nodes * cores_per_node
    slots = []
    for duration, counts in timeline:
        if duration <= 0:
            raise ModelError(f"timeline slot duration must be positive, got {duration}")
        values = counts.values() if isinstance(counts, Mapping) else counts
        values = list(values)
        if len(values) != job.requested_nodes:
            raise ModelError(f"slot covers {len(values)} nodes, job has {job.requested_nodes}")
        if max(values) > cores_per_node:
            raise ModelError(f"slot assigns more than {cores_per_node} cores on a node")
        slots.append((duration, rate_units(values, model)))
    elapsed = elapsed_for_work(job.requested_time * req_cpus, slots, req_cpus)
    return elapsed - job.requested_time
