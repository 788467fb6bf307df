"""Deterministic discrete-event simulation of the cluster under a scheduling policy."""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

from .cluster import ClusterConfig, ClusterState
from .errors import ConfigError, SimError, StateError
from .nodemgr import NodeManager, check_sharing_factor
from .runtime_model import ExecutionState, ModelKind, elapsed_for_work, rate_units
from .scheduler import Scheduler
from .selection import CutoffPolicy
from .workload import Job

logger = logging.getLogger(__name__)

COMPLETE, SUBMIT, TICK = 0, 1, 2
POLICIES = ("static", "sd")


@dataclass(frozen=True)
class SimConfig:
    cluster: ClusterConfig
    policy: str = "static"
    model: ModelKind = ModelKind.IDEAL
    cutoff: CutoffPolicy = field(default_factory=CutoffPolicy)
    sharing_factor: float = 0.5
    max_mates: int = 2
    candidate_cap: int = 64
    use_free_nodes: bool = False
    backfill_interval: int = 30
    backfill_depth: int = 0
    easy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        object.__setattr__(self, "cutoff", CutoffPolicy.parse(self.cutoff))
        check_sharing_factor(self.sharing_factor)
        if self.max_mates < 1:
            raise ConfigError("max mates must be >= 1")
        if self.candidate_cap < 1:
            raise ConfigError("candidate cap must be >= 1")
        if self.backfill_interval < 1:
            raise ConfigError("backfill interval must be >= 1 s")
        if self.backfill_depth < 0:
            raise ConfigError("backfill depth must be >= 0 (0 means unlimited)")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass
class MateInfo:
    shares: dict[int, tuple[int, int]]
    min_give: int
    r_shrunk: int
    r_cur: int


@dataclass
class RunningJob:
    job: Job
    exec: ExecutionState
    order: int
    predicted_end: int = 0
    version: int = 0
    mate_info: MateInfo | None | bool = False  # False = not computed yet


class EventLog:
    """Ordered simulation records, serialised one JSON object per line."""

    def __init__(self, records: Iterable[dict] | None = None):
        self.records: list[dict] = list(records or [])

    def add(self, t: int, ev: str, job: int, **fields) -> None:
        rec = {"t": t, "ev": ev, "job": job}
        rec.update(fields)
        self.records.append(rec)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w") as fp:
            fp.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EventLog":
        return cls(json.loads(line) for line in text.splitlines() if line.strip())

    @classmethod
    def read(cls, path) -> "EventLog":
        with open(path) as fp:
            return cls.loads(fp.read())

    def of_kind(self, ev: str) -> list[dict]:
        return [r for r in self.records if r["ev"] == ev]


class InvariantChecker:
    """Collects violations of the allocation invariants after every event.

    It keeps its own memory of shrinks so lender restoration is verified
    independently of the node manager's bookkeeping.
    """

    def __init__(self, strict: bool = False):
        self.strict = strict
        self.violations: list[str] = []
        self.checks = 0
        # (node, borrower) -> (lender, lender count before shrink, lender count after shrink)
        self._loans: dict[tuple[int, int], tuple[int, int, int]] = {}
        self._seen = 0

    def __call__(self, sim: "Simulation", t: int) -> None:
        self.checks += 1
        before = len(self.violations)
        for problem in sim.cluster.check():
            self.violations.append(f"t={t}: {problem}")
        for job_id, rj in sim.running.items():
            placement = sim.cluster.placement_of(job_id)
            if placement != rj.exec.counts:
                self.violations.append(f"t={t}: job {job_id} runs on {rj.exec.counts}, owns {placement}")
            if rj.job.malleable and min(placement.values()) < rj.job.ranks_per_node:
                self.violations.append(f"t={t}: job {job_id} below one core per rank")
        self._follow_log(sim, t)
        if self.strict and len(self.violations) > before:
            raise StateError(f"invariant violated; {self.violations[before]}; residents: {[dict(r) for r in sim.cluster.residents if r]}")

    def _follow_log(self, sim, t):
        records = sim.log.records
        for rec in records[self._seen:]:
            ev = rec["ev"]
            if ev == "shrink":
                self._loans[(rec["node"], rec["for"])] = (rec["job"], rec["before"], rec["cores"])
            elif ev == "complete":
                for key in [k for k in self._loans if k[1] == rec["job"]]:
                    lender, before, after = self._loans.pop(key)
                    node = key[0]
                    if lender in sim.cluster.residents[node]:
                        got = sim.cluster.residents[node][lender]
                        if got != before:
                            self.violations.append(
                                f"t={t}: lender {lender} has {got} cores on node {node} after borrower "
                                f"{rec['job']} left, had {before} before the shrink"
                            )
                for key in [k for k, v in self._loans.items() if v[0] == rec["job"]]:
                    del self._loans[key]
        self._seen = len(records)


class Simulation:
    def __init__(self, jobs: list[Job], config: SimConfig, checker=None):
        self.config = config
        self.jobs = {j.id: j for j in jobs}
        if len(self.jobs) != len(jobs):
            raise ConfigError("duplicate job ids in workload")
        for j in jobs:
            j.validate(config.cluster)
        self.cluster = ClusterState(config.cluster)
        self.nodemgr = NodeManager(self.cluster, config.sharing_factor)
        self.running: dict[int, RunningJob] = {}
        self.queue: list[Job] = []
        self.log = EventLog()
        self.scheduler = Scheduler(config, self)
        self.checker = checker
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self._order = 0
        self._tick_pending = False
        self._dirty = False
        for j in sorted(jobs, key=lambda j: (j.submit_time, j.priority, j.id)):
            self._push(j.submit_time, SUBMIT, j.id)

    # -- event queue -------------------------------------------------------

    def _push(self, t: int, kind: int, job_id: int = 0, version: int = 0) -> None:
        heapq.heappush(self._heap, (t, kind, self._seq, job_id, version))
        self._seq += 1

    def _schedule_completion(self, rj: RunningJob) -> None:
        rj.version += 1
        self._push(rj.exec.end_time(), COMPLETE, rj.job.id, rj.version)

    def run(self) -> EventLog:
        heap = self._heap
        while heap:
            t = heap[0][0]
            if t < self.now:
                raise StateError(f"event at {t} precedes clock {self.now}")
            self.now = t
            while heap and heap[0][0] == t:
                _, kind, _, job_id, version = heapq.heappop(heap)
                if kind == COMPLETE:
                    rj = self.running.get(job_id)
                    if rj is None or rj.version != version:
                        continue
                    self._complete(rj, t)
                elif kind == SUBMIT:
                    job = self.jobs[job_id]
                    self.queue.append(job)
                    self.log.add(t, "submit", job.id, nodes=job.requested_nodes, req=job.requested_time,
                                 runtime=job.base_runtime, malleable=job.malleable)
                    self._dirty = True
                else:
                    self._tick_pending = False
                    self._dirty = True
                self._check(t)
            if self._dirty:
                self._dirty = False
                self.scheduler.backfill_pass(t)
                self._check(t)
            if self.queue and not self._tick_pending:
                nxt = self._next_tick(t)
                if nxt is not None:
                    self._tick_pending = True
                    self._push(nxt, TICK)
        if self.queue or self.running:
            raise StateError(f"simulation ended with {len(self.queue)} queued and {len(self.running)} running jobs")
        return self.log

    def _next_tick(self, now: int) -> int | None:
        """Next periodic pass that could change anything.

        Without submissions or completions the free-node profile only moves
        when a running job outlives its predicted end, so periodic passes are
        only scheduled from the first such overrun on.
        """
        overrun = [rj.predicted_end for rj in self.running.values() if rj.exec.end_time() > rj.predicted_end]
        if not overrun:
            return None
        step = self.config.backfill_interval
        return (max(now, min(overrun)) // step + 1) * step

    def _check(self, t: int) -> None:
        if self.checker is not None:
            self.checker(self, t)

    # -- actions used by the scheduler -------------------------------------

    def _new_running(self, job: Job, placement: dict[int, int], now: int) -> RunningJob:
        cpn = self.config.cluster.cores_per_node
        ex = ExecutionState(job.id, now, job.base_runtime, job.requested_nodes * cpn, dict(placement),
                            self.config.model)
        rj = RunningJob(job, ex, self._order)
        self._order += 1
        self.running[job.id] = rj
        self.queue.remove(job)
        return rj

    def start_static(self, job: Job, nodes: list[int], now: int) -> None:
        cpn = self.config.cluster.cores_per_node
        placement = {n: cpn for n in nodes}
        self.nodemgr.register(job.id, job.ranks_per_node, job.malleable)
        self.cluster.allocate(job.id, placement)
        rj = self._new_running(job, placement, now)
        self._refresh([job.id], now)
        self._schedule_completion(rj)
        self.log.add(now, "start", job.id, nodes=list(nodes))

    def start_malleable(self, job: Job, solution, now: int, static_end: int, mall_end: int,
                        cutoff: float, updates) -> list[int]:
        lenders = {}
        for m in solution.mates:
            for node in m.nodes:
                lenders[node] = m.job_id
        self.nodemgr.register(job.id, job.ranks_per_node, job.malleable)
        directives = self.nodemgr.start_shared(job.id, lenders, list(solution.free_nodes_used))
        placement = self.cluster.placement_of(job.id)
        rj = self._new_running(job, placement, now)
        self.log.add(now, "malleable_start", job.id, nodes=sorted(placement),
                     mates=[m.job_id for m in solution.mates],
                     free_nodes=list(solution.free_nodes_used),
                     static_end=static_end, mall_end=mall_end,
                     pi=solution.performance_impact,
                     cutoff=None if math.isinf(cutoff) else cutoff,
                     penalties={str(u.job_id): u.penalty for u in updates})
        touched = self._apply_directives(directives, now)
        self._refresh([job.id] + touched, now)
        self._schedule_completion(rj)
        return sorted(placement)

    def _apply_directives(self, directives, now: int) -> list[int]:
        touched = []
        for d in directives:
            self.log.add(now, d.kind, d.job_id, node=d.node, cores=d.cores, before=d.before,
                         **({"for": self._borrower_of(d)} if d.kind == "shrink" else {}))
            if d.job_id not in touched:
                touched.append(d.job_id)
        for job_id in touched:
            rj = self.running[job_id]
            rj.exec.reconfigure(now, self.cluster.placement_of(job_id))
            self._schedule_completion(rj)
        return touched

    def _borrower_of(self, d) -> int:
        for b in self.cluster.residents[d.node]:
            if self.nodemgr.lender_of(d.node, b) == d.job_id:
                return b
        raise StateError(f"shrink of job {d.job_id} on node {d.node} without a borrower")

    def _complete(self, rj: RunningJob, now: int) -> None:
        job = rj.job
        rj.exec.sync(now)
        if rj.exec.done < rj.exec.total:
            raise StateError(f"job {job.id} completed with {rj.exec.done}/{rj.exec.total} work units")
        directives = self.nodemgr.finish_job(job.id)
        del self.running[job.id]
        self.scheduler.forget(job.id)
        self.log.add(now, "complete", job.id, start=rj.exec.start_time)
        touched = self._apply_directives(directives, now)
        self._refresh(touched, now)
        self._dirty = True

    # -- scheduler-side predictions ----------------------------------------

    def _refresh(self, job_ids: list[int], now: int) -> None:
        """Recompute predicted ends (borrowers before lenders) and drop cached mate data."""
        todo = set(j for j in job_ids if j in self.running)
        frontier = list(todo)
        while frontier:
            j = frontier.pop()
            for node in self.cluster.nodes_of(j):
                lender = self.nodemgr.lender_of(node, j)
                if lender is not None and lender not in todo:
                    todo.add(lender)
                    frontier.append(lender)
        nodes = set()
        for j in sorted(todo, key=lambda j: -self.running[j].order):
            rj = self.running[j]
            rj.predicted_end = self._predict_end(rj, now)
            nodes.update(self.cluster.nodes_of(j))
        for node in nodes:
            for j in self.cluster.residents[node]:
                self.running[j].mate_info = False

    def _predict_end(self, rj: RunningJob, now: int) -> int:
        """Worst-case end estimate from the requested time and the known loans."""
        ex = rj.exec
        rem = rj.job.requested_time * ex.req_cpus - ex.done_at(now)
        if rem <= 0:
            return now
        counts = dict(ex.counts)
        returns: dict[int, list[tuple[int, int]]] = {}
        for borrower, node, lent in self.nodemgr.loans_of(rj.job.id):
            returns.setdefault(borrower, []).append((node, lent))
        timeline = []
        t = now
        for borrower in sorted(returns, key=lambda b: (self.running[b].predicted_end, b)):
            b_end = self.running[borrower].predicted_end
            if b_end > t:
                timeline.append((b_end - t, rate_units(counts.values(), ModelKind.WORST_CASE)))
                t = b_end
            for node, lent in returns[borrower]:
                counts[node] += lent
        final = rate_units(counts.values(), ModelKind.WORST_CASE)
        return now + elapsed_for_work(rem, timeline, final)

    def mate_info(self, job_id: int) -> MateInfo | None:
        rj = self.running[job_id]
        if rj.mate_info is not False:
            return rj.mate_info
        info = None
        if rj.job.malleable and not self.nodemgr.is_lending(job_id):
            shares = {}
            for node, count in sorted(rj.exec.counts.items()):
                give = self.nodemgr.lendable(node, job_id)
                if give < 1:
                    shares = None
                    break
                shares[node] = (count - give, give)
            if shares:
                keep = [k for k, _ in shares.values()]
                info = MateInfo(shares, min(g for _, g in shares.values()),
                                rate_units(keep, ModelKind.WORST_CASE),
                                rate_units(rj.exec.counts.values(), ModelKind.WORST_CASE))
        rj.mate_info = info
        return info

    def running_slowdowns(self, now: int) -> list[float]:
        out = []
        for j in sorted(self.running):
            rj = self.running[j]
            end = max(rj.predicted_end, now)
            out.append((end - rj.job.submit_time) / rj.job.requested_time)
        return out


def run(jobs: list[Job], config: SimConfig, checker=None):
    """Simulate ``jobs`` under ``config``; returns (SimReport, EventLog)."""
    from .metrics import summarize

    sim = Simulation(jobs, config, checker)
    try:
        log = sim.run()
    except SimError:
        logger.error("simulation aborted at t=%s; queued=%d running=%d", sim.now, len(sim.queue), len(sim.running))
        raise
    return summarize(log), log


@dataclass
class Comparison:
    baseline: object
    other: object
    baseline_log: EventLog
    other_log: EventLog
    ratios: dict[str, float]


def replay_compare(jobs: list[Job], config_a: SimConfig, config_b: SimConfig) -> Comparison:
    """Run both configurations on the same workload; ratios are b / a."""
    rep_a, log_a = run(jobs, config_a)
    rep_b, log_b = run(jobs, config_b)
    ratios = {}
    for key in ("makespan", "avg_response_time", "avg_slowdown"):
        a, b = getattr(rep_a, key), getattr(rep_b, key)
        ratios[key] = b / a if a else float("nan")
    return Comparison(rep_a, rep_b, log_a, log_b, ratios)
