"""Machine model: nodes made of sockets made of cores, with per-core ownership.

Core indices are socket-major: on a 2x24 node cores 0-23 sit on socket 0 and
24-47 on socket 1.  Ownership on a node is always laid out as contiguous
blocks in resident arrival order, so two residents holding 24 cores each on
such a node end up on separate sockets.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AllocationError, ConfigError, StateError


@dataclass(frozen=True)
class ClusterConfig:
    node_count: int
    sockets_per_node: int = 2
    cores_per_socket: int = 24
    max_residents: int = 2

    def __post_init__(self):
        for name in ("node_count", "sockets_per_node", "cores_per_socket"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_residents < 1:
            raise ConfigError(f"max_residents must be >= 1, got {self.max_residents}")

    @property
    def cores_per_node(self) -> int:
        return self.sockets_per_node * self.cores_per_socket

    @property
    def total_cores(self) -> int:
        return self.node_count * self.cores_per_node

    def socket_of(self, core: int) -> int:
        return core // self.cores_per_socket


class ClusterState:
    """Ground truth for who owns which core.

    ``owners[n][c]`` is the job id owning core ``c`` of node ``n`` or None.
    ``residents[n]`` keeps the jobs on node ``n`` in arrival order and maps
    each to its core count there.
    """

    def __init__(self, config: ClusterConfig):
        self.config = config
        cpn = config.cores_per_node
        self.owners: list[list[int | None]] = [[None] * cpn for _ in range(config.node_count)]
        self.residents: list[dict[int, int]] = [{} for _ in range(config.node_count)]
        self._free: set[int] = set(range(config.node_count))
        self._job_nodes: dict[int, list[int]] = {}

    # -- queries -------------------------------------------------------

    def free_nodes(self) -> list[int]:
        return sorted(self._free)

    def free_count(self) -> int:
        return len(self._free)

    def is_free(self, node: int) -> bool:
        return node in self._free

    def nodes_of(self, job_id: int) -> list[int]:
        try:
            return list(self._job_nodes[job_id])
        except KeyError:
            raise StateError(f"job {job_id} owns no cores") from None

    def placement_of(self, job_id: int) -> dict[int, int]:
        return {n: self.residents[n][job_id] for n in self.nodes_of(job_id)}

    def unowned_cores(self, node: int) -> int:
        return self.config.cores_per_node - sum(self.residents[node].values())

    def owned_cores(self, job_id: int) -> int:
        return sum(self.placement_of(job_id).values())

    def cores_of(self, node: int, job_id: int) -> list[int]:
        return [c for c, owner in enumerate(self.owners[node]) if owner == job_id]

    def running_jobs(self) -> list[int]:
        return sorted(self._job_nodes)

    # -- mutation ------------------------------------------------------

    def allocate(self, job_id: int, placement: dict[int, int]) -> dict[int, int]:
        """Give ``job_id`` the requested number of cores on each node."""
        if job_id in self._job_nodes:
            raise AllocationError(f"job {job_id} is already allocated")
        if not placement:
            raise AllocationError(f"empty placement for job {job_id}")
        for node, count in placement.items():
            if count < 1:
                raise AllocationError(f"job {job_id}: non-positive core count on node {node}")
            if not 0 <= node < self.config.node_count:
                raise AllocationError(f"job {job_id}: node {node} does not exist")
            if self.unowned_cores(node) < count:
                raise AllocationError(
                    f"job {job_id}: node {node} has {self.unowned_cores(node)} free cores, {count} requested"
                )
            if len(self.residents[node]) >= self.config.max_residents:
                raise AllocationError(f"job {job_id}: node {node} already hosts {len(self.residents[node])} jobs")
        for node, count in sorted(placement.items()):
            self.residents[node][job_id] = count
            self._free.discard(node)
            self._layout(node)
        self._job_nodes[job_id] = sorted(placement)
        return dict(placement)

    def release(self, job_id: int) -> int:
        """Drop every core owned by ``job_id``; returns how many were freed."""
        nodes = self._job_nodes.pop(job_id, None)
        if nodes is None:
            raise StateError(f"release of unknown job {job_id}")
        freed = 0
        for node in nodes:
            freed += self.residents[node].pop(job_id)
            if not self.residents[node]:
                self._free.add(node)
            self._layout(node)
        return freed

    def set_counts(self, node: int, counts: dict[int, int]) -> None:
        """Re-partition a node among its current residents."""
        if set(counts) != set(self.residents[node]):
            raise StateError(f"node {node}: plan covers {sorted(counts)}, residents are {sorted(self.residents[node])}")
        if sum(counts.values()) > self.config.cores_per_node:
            raise AllocationError(f"node {node}: plan oversubscribes ({sum(counts.values())} cores)")
        if any(c < 1 for c in counts.values()):
            raise AllocationError(f"node {node}: plan leaves a resident without cores")
        for job_id in self.residents[node]:
            self.residents[node][job_id] = counts[job_id]
        self._layout(node)

    def _layout(self, node: int) -> None:
        row = self.owners[node]
        i = 0
        for job_id, count in self.residents[node].items():
            row[i:i + count] = [job_id] * count
            i += count
        row[i:] = [None] * (len(row) - i)

    # -- checking ------------------------------------------------------

    def check(self) -> list[str]:
        """Return descriptions of any broken invariant (empty when consistent)."""
        problems = []
        cpn = self.config.cores_per_node
        seen_nodes: dict[int, set[int]] = {}
        for node in range(self.config.node_count):
            row = self.owners[node]
            res = self.residents[node]
            tally: dict[int, int] = {}
            for owner in row:
                if owner is not None:
                    tally[owner] = tally.get(owner, 0) + 1
            if tally != res:
                problems.append(f"node {node}: core owners {tally} disagree with residents {res}")
            if sum(res.values()) + row.count(None) != cpn:
                problems.append(f"node {node}: owned + unowned != {cpn}")
            if (node in self._free) != (not res):
                problems.append(f"node {node}: free-set membership inconsistent")
            if len(res) > self.config.max_residents:
                problems.append(f"node {node}: {len(res)} residents exceed cap {self.config.max_residents}")
            for job_id in res:
                seen_nodes.setdefault(job_id, set()).add(node)
        for job_id, nodes in self._job_nodes.items():
            if set(nodes) != seen_nodes.get(job_id, set()):
                problems.append(f"job {job_id}: node index disagrees with residents")
        if set(seen_nodes) != set(self._job_nodes):
            problems.append("resident jobs and job index differ")
        return problems

    def snapshot(self) -> tuple:
        return (
            tuple(tuple(row) for row in self.owners),
            tuple(tuple(r.items()) for r in self.residents),
            tuple(sorted(self._free)),
        )
