"""Workload ingestion: SWF traces and a seeded synthetic generator.

The Standard Workload Format is described at
https://www.cs.huji.ac.il/labs/parallel/workload/swf.html
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from enum import IntEnum

from .cluster import ClusterConfig
from .errors import ConfigError, ParseError, WorkloadError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Job:
    id: int
    submit_time: int
    requested_time: int
    base_runtime: int
    requested_nodes: int
    ranks_per_node: int = 1
    malleable: bool = True
    priority: int = 0

    def validate(self, cluster: ClusterConfig | None = None) -> None:
        if self.id < 1:
            raise WorkloadError(f"job id must be positive, got {self.id}")
        if self.submit_time < 0:
            raise WorkloadError(f"job {self.id}: negative submit time")
        if self.requested_time < 1 or self.base_runtime < 1:
            raise WorkloadError(f"job {self.id}: times must be >= 1 s")
        if self.requested_nodes < 1 or self.ranks_per_node < 1:
            raise WorkloadError(f"job {self.id}: node and rank counts must be positive")
        if cluster is not None:
            if self.requested_nodes > cluster.node_count:
                raise WorkloadError(
                    f"job {self.id} requests {self.requested_nodes} nodes, cluster has {cluster.node_count}"
                )
            if self.ranks_per_node > cluster.cores_per_node:
                raise WorkloadError(
                    f"job {self.id}: {self.ranks_per_node} ranks per node exceed {cluster.cores_per_node} cores"
                )


@dataclass(frozen=True)
class WorkloadMeta:
    job_count: int
    system_nodes: int
    system_cores: int
    source: str
    dropped: int = 0


class SwfField(IntEnum):
    JOB_ID = 0
    SUBMIT = 1
    WAIT = 2
    RUN_TIME = 3
    ALLOC_PROCS = 4
    AVG_CPU = 5
    USED_MEM = 6
    REQ_PROCS = 7
    REQ_TIME = 8
    REQ_MEM = 9
    STATUS = 10
    USER = 11
    GROUP = 12
    EXECUTABLE = 13
    QUEUE = 14
    PARTITION = 15
    PRECEDING_JOB = 16
    THINK_TIME = 17


SWF_FIELDS = len(SwfField)


def malleability_flags(count: int, fraction: float, seed: int) -> list[bool]:
    """Independent seeded coin flips, one per job in submit order.

    Both the parser and the generator draw flags from this stream, which is
    what lets a generated trace round-trip through an SWF file.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"malleable fraction must be in [0, 1], got {fraction}")
    rng = random.Random(f"malleable-{seed}")
    return [rng.random() < fraction for _ in range(count)]


def _order(jobs: list[Job], fraction: float, seed: int) -> list[Job]:
    jobs = sorted(jobs, key=lambda j: (j.submit_time, j.id))
    flags = malleability_flags(len(jobs), fraction, seed)
    return [
        Job(j.id, j.submit_time, j.requested_time, j.base_runtime, j.requested_nodes,
            j.ranks_per_node, flag, prio)
        for prio, (j, flag) in enumerate(zip(jobs, flags))
    ]


def parse_swf(text, cluster: ClusterConfig, malleable_fraction: float = 1.0,
              rng_seed: int = 0, ranks_per_node: int = 1) -> tuple[list[Job], WorkloadMeta]:
    """Parse SWF text (a string or an iterable of lines) into jobs.

    Records with a non-positive run time or processor count are dropped.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    cpn = cluster.cores_per_node
    jobs = []
    dropped = 0
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(";"):
            continue
        parts = stripped.split()
        if len(parts) != SWF_FIELDS:
            raise ParseError(lineno, f"expected {SWF_FIELDS} fields, found {len(parts)}")
        try:
            fields = [int(float(p)) for p in parts]
        except ValueError:
            raise ParseError(lineno, "non-numeric field") from None

        run_time = fields[SwfField.RUN_TIME]
        procs = fields[SwfField.REQ_PROCS]
        if procs <= 0:
            procs = fields[SwfField.ALLOC_PROCS]
        if run_time <= 0 or procs <= 0:
            dropped += 1
            continue
        req_time = fields[SwfField.REQ_TIME]
        if req_time <= 0:
            req_time = run_time
        job = Job(
            id=fields[SwfField.JOB_ID],
            submit_time=fields[SwfField.SUBMIT],
            requested_time=req_time,
            base_runtime=run_time,
            requested_nodes=math.ceil(procs / cpn),
            ranks_per_node=ranks_per_node,
        )
        try:
            job.validate(cluster)
        except WorkloadError as exc:
            raise ParseError(lineno, str(exc)) from None
        jobs.append(job)

    if dropped:
        logger.info("dropped %d SWF records with non-positive run time or processors", dropped)
    if not jobs:
        raise WorkloadError("workload is empty after filtering")
    if len({j.id for j in jobs}) != len(jobs):
        raise WorkloadError("duplicate job ids in trace")
    jobs = _order(jobs, malleable_fraction, rng_seed)
    meta = WorkloadMeta(len(jobs), cluster.node_count, cluster.total_cores, "swf", dropped)
    return jobs, meta


def load_swf(path, cluster: ClusterConfig, malleable_fraction: float = 1.0,
             rng_seed: int = 0, ranks_per_node: int = 1) -> tuple[list[Job], WorkloadMeta]:
    with open(path) as fp:
        return parse_swf(fp, cluster, malleable_fraction, rng_seed, ranks_per_node)


@dataclass(frozen=True)
class SynthParams:
    job_count: int
    node_range: tuple[int, int] = (1, 128)
    runtime_range: tuple[int, int] = (60, 36000)
    estimate_inflation_range: tuple[float, float] = (1.0, 4.0)
    interarrival_mean_seconds: float = 600.0
    malleable_fraction: float = 1.0
    ranks_per_node: int = 1

    def validate(self, cluster: ClusterConfig | None = None) -> None:
        if self.job_count < 1:
            raise ConfigError("job_count must be >= 1")
        lo, hi = self.node_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid node range {self.node_range}")
        lo, hi = self.runtime_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid runtime range {self.runtime_range}")
        lo, hi = self.estimate_inflation_range
        if not 1.0 <= lo <= hi:
            raise ConfigError(f"invalid estimate inflation range {self.estimate_inflation_range}")
        if self.interarrival_mean_seconds <= 0:
            raise ConfigError("interarrival mean must be positive")
        if not 0.0 <= self.malleable_fraction <= 1.0:
            raise ConfigError("malleable fraction must be in [0, 1]")
        if self.ranks_per_node < 1:
            raise ConfigError("ranks_per_node must be >= 1")
        if cluster is not None and self.node_range[1] > cluster.node_count:
            raise ConfigError(f"node range {self.node_range} exceeds cluster size {cluster.node_count}")


def gen_synthetic(params: SynthParams, rng_seed: int,
                  cluster: ClusterConfig | None = None) -> tuple[list[Job], WorkloadMeta]:
    params.validate(cluster)
    rng = random.Random(rng_seed)
    lo_n, hi_n = params.node_range
    log_lo, log_hi = math.log(lo_n), math.log(hi_n + 1)
    t = 0.0
    jobs = []
    for i in range(params.job_count):
        if i:
            t += rng.expovariate(1.0 / params.interarrival_mean_seconds)
        nodes = min(hi_n, int(math.exp(rng.uniform(log_lo, log_hi))))
        runtime = rng.randint(*params.runtime_range)
        inflation = rng.uniform(*params.estimate_inflation_range)
        jobs.append(Job(
            id=i + 1,
            submit_time=int(t),
            requested_time=max(runtime, math.ceil(runtime * inflation)),
            base_runtime=runtime,
            requested_nodes=nodes,
            ranks_per_node=params.ranks_per_node,
        ))
    jobs = _order(jobs, params.malleable_fraction, rng_seed)
    for j in jobs:
        j.validate(cluster)
    nodes = cluster.node_count if cluster else hi_n
    cores = cluster.total_cores if cluster else 0
    return jobs, WorkloadMeta(len(jobs), nodes, cores, "synthetic")


def format_swf(jobs: list[Job], cluster: ClusterConfig) -> str:
    """Render jobs as SWF text, filling the fields we do not model with -1."""
    cpn = cluster.cores_per_node
    out = [
        "; Version: 2.2",
        f"; MaxJobs: {len(jobs)}",
        f"; MaxNodes: {cluster.node_count}",
        f"; MaxProcs: {cluster.total_cores}",
    ]
    for j in jobs:
        rec = [-1] * SWF_FIELDS
        rec[SwfField.JOB_ID] = j.id
        rec[SwfField.SUBMIT] = j.submit_time
        rec[SwfField.RUN_TIME] = j.base_runtime
        rec[SwfField.ALLOC_PROCS] = j.requested_nodes * cpn
        rec[SwfField.REQ_PROCS] = j.requested_nodes * cpn
        rec[SwfField.REQ_TIME] = j.requested_time
        rec[SwfField.STATUS] = 1
        out.append(" ".join(str(v) for v in rec))
    return "\n".join(out) + "\n"
