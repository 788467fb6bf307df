"""Node-level core distribution for co-scheduled malleable jobs.

When a malleable job starts on a node that already runs a mate, the mate is
shrunk by at most ``floor(sharing_factor * cores_per_node)`` cores (and never
below one core per rank) and the newcomer receives the freed block.  When the
newcomer ends its cores go back to the mate; when the mate ends first its
cores are spread over whoever is left on the node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cluster import ClusterConfig, ClusterState
from .errors import AllocationError, ConfigError, StateError


class DistributionError(AllocationError):
    """The newcomer cannot get enough cores on a node."""


def check_sharing_factor(value: float) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ConfigError(f"sharing factor must lie strictly between 0 and 1, got {value}")
    return value


@dataclass(frozen=True)
class Resident:
    job_id: int
    cores: int
    ranks_per_node: int = 1
    malleable: bool = True


@dataclass(frozen=True)
class NodePlan:
    counts: dict[int, int]
    sockets: dict[int, tuple[int, ...]]
    # borrower -> lender
    edges: dict[int, int]


@dataclass(frozen=True)
class Directive:
    kind: str  # "shrink" | "expand"
    job_id: int
    node: int
    cores: int
    before: int


@dataclass
class _Edge:
    lender: int
    lent: int
    lender_before: int


def lendable(resident: Resident, cores_per_node: int, sharing_factor: float) -> int:
    """Cores a resident can hand over without breaking the sharing or rank floor."""
    if not resident.malleable:
        return 0
    cap = math.floor(sharing_factor * cores_per_node + 1e-9)
    return max(0, min(cap, resident.cores - resident.ranks_per_node))


def _sockets(counts: dict[int, int], cores_per_socket: int) -> dict[int, tuple[int, ...]]:
    out = {}
    i = 0
    for job_id, count in counts.items():
        first, last = i // cores_per_socket, (i + count - 1) // cores_per_socket
        out[job_id] = tuple(range(first, last + 1))
        i += count
    return out


def _spread(cores: int, receivers: list[int]) -> dict[int, int]:
    share, extra = divmod(cores, len(receivers))
    return {job: share + (1 if k < extra else 0) for k, job in enumerate(receivers)}


def distribute_cpus(config: ClusterConfig, residents: list[Resident], newcomer: Resident | None = None,
                    lender: int | None = None, sharing_factor: float = 0.5) -> NodePlan:
    """Core split for one node.

    ``residents`` are in arrival order.  With a newcomer, ``lender`` (default:
    the first malleable resident) gives up cores for it.  Without one, any
    unowned cores are spread over the malleable residents.
    """
    cpn = config.cores_per_node
    counts = {r.job_id: r.cores for r in residents}
    edges: dict[int, int] = {}
    if newcomer is not None:
        if len(residents) + 1 > config.max_residents:
            raise DistributionError(f"node would host more than {config.max_residents} jobs")
        by_id = {r.job_id: r for r in residents}
        if lender is None:
            lender = next((r.job_id for r in residents if r.malleable), None)
        if lender not in by_id:
            raise DistributionError("no malleable resident to take cores from")
        unowned = cpn - sum(counts.values())
        give = lendable(by_id[lender], cpn, sharing_factor)
        if give + unowned < newcomer.ranks_per_node or give + unowned < 1:
            raise DistributionError(
                f"newcomer {newcomer.job_id} needs {newcomer.ranks_per_node} cores, only {give + unowned} extractable"
            )
        counts[lender] -= give
        counts[newcomer.job_id] = give + unowned
        edges[newcomer.job_id] = lender
    else:
        unowned = cpn - sum(counts.values())
        receivers = [r.job_id for r in residents if r.malleable]
        if unowned > 0 and receivers:
            for job, extra in _spread(unowned, receivers).items():
                counts[job] += extra
    for r in residents:
        if r.malleable and counts[r.job_id] < r.ranks_per_node:
            raise DistributionError(f"job {r.job_id} would drop below one core per rank")
    return NodePlan(counts, _sockets(counts, config.cores_per_socket), edges)


class NodeManager:
    """Applies shrink/expand decisions to the cluster and remembers who lent what."""

    def __init__(self, cluster: ClusterState, sharing_factor: float = 0.5):
        self.cluster = cluster
        self.sharing_factor = check_sharing_factor(sharing_factor)
        self._meta: dict[int, Resident] = {}
        # (node, borrower) -> edge
        self._edges: dict[tuple[int, int], _Edge] = {}
        self._loans: dict[int, int] = {}

    def register(self, job_id: int, ranks_per_node: int, malleable: bool) -> None:
        self._meta[job_id] = Resident(job_id, 0, ranks_per_node, malleable)

    def forget(self, job_id: int) -> None:
        self._meta.pop(job_id, None)

    def residents(self, node: int) -> list[Resident]:
        out = []
        for job_id, cores in self.cluster.residents[node].items():
            m = self._meta.get(job_id)
            if m is None:
                raise StateError(f"job {job_id} on node {node} was never registered")
            out.append(Resident(job_id, cores, m.ranks_per_node, m.malleable))
        return out

    def lendable(self, node: int, job_id: int) -> int:
        """Cores ``job_id`` could give a newcomer on ``node`` right now."""
        if self.is_lending(job_id):
            return 0
        res = self.cluster.residents[node]
        if len(res) >= self.cluster.config.max_residents:
            return 0
        m = self._meta[job_id]
        return lendable(Resident(job_id, res[job_id], m.ranks_per_node, m.malleable),
                        self.cluster.config.cores_per_node, self.sharing_factor)

    def is_lending(self, job_id: int) -> bool:
        return self._loans.get(job_id, 0) > 0

    def loans_of(self, lender: int) -> list[tuple[int, int, int]]:
        """(borrower, node, cores) for every active loan made by ``lender``."""
        return sorted((b, n, e.lent) for (n, b), e in self._edges.items() if e.lender == lender)

    def shared_nodes(self) -> list[int]:
        """Nodes currently hosting a borrower next to its lender."""
        return [n for n, _ in self._edges]

    def lender_of(self, node: int, borrower: int) -> int | None:
        e = self._edges.get((node, borrower))
        return None if e is None else e.lender

    # -- start ---------------------------------------------------------

    def on_job_start(self, node: int, newcomer: Resident, lender: int) -> list[Directive]:
        """Shrink ``lender`` on ``node`` and seat ``newcomer`` in the freed cores.

        The newcomer's own allocation is returned as a directive too; the
        cluster allocation for it is done by :meth:`start_shared`.
        """
        before = self.cluster.residents[node][lender]
        plan = distribute_cpus(self.cluster.config, self.residents(node), newcomer, lender, self.sharing_factor)
        after = plan.counts[lender]
        self.cluster.set_counts(node, {j: plan.counts[j] for j in self.cluster.residents[node]})
        self._edges[(node, newcomer.job_id)] = _Edge(lender, before - after, before)
        self._loans[lender] = self._loans.get(lender, 0) + 1
        return [
            Directive("shrink", lender, node, after, before),
            Directive("start", newcomer.job_id, node, plan.counts[newcomer.job_id], 0),
        ]

    def start_shared(self, job_id: int, lenders: dict[int, int], free_nodes: list[int] = ()) -> list[Directive]:
        """Start ``job_id`` on the lenders' nodes (node -> lender) plus whole free nodes."""
        m = self._meta[job_id]
        newcomer = Resident(job_id, 0, m.ranks_per_node, m.malleable)
        directives = []
        placement = {}
        done = []
        try:
            for node in sorted(lenders):
                ds = self.on_job_start(node, newcomer, lenders[node])
                done.append((node, ds[0]))
                directives.append(ds[0])
                placement[node] = ds[1].cores
        except AllocationError:
            for node, d in done:
                self._drop_edge((node, job_id))
                self.cluster.set_counts(node, {**self.cluster.residents[node], d.job_id: d.before})
            raise
        for node in free_nodes:
            placement[node] = self.cluster.config.cores_per_node
        self.cluster.allocate(job_id, placement)
        return directives

    # -- end -----------------------------------------------------------

    def on_job_end(self, node: int, ended: int) -> list[Directive]:
        """Who gets ``ended``'s cores on ``node`` (does not touch the cluster)."""
        res = self.cluster.residents[node]
        if ended not in res:
            raise StateError(f"job {ended} is not resident on node {node}")
        cores = res[ended]
        others = [j for j in res if j != ended]
        if not others:
            return []
        edge = self._edges.get((node, ended))
        if edge is not None and edge.lender in res:
            owner = edge.lender
            return [Directive("expand", owner, node, res[owner] + cores, res[owner])]
        if edge is not None:
            raise StateError(f"dangling loan: job {ended} borrowed from {edge.lender}, gone from node {node}")
        receivers = [j for j in others if self._meta[j].malleable]
        if not receivers:
            return []
        return [Directive("expand", j, node, res[j] + extra, res[j])
                for j, extra in _spread(cores, receivers).items()]

    def finish_job(self, job_id: int) -> list[Directive]:
        """Release ``job_id`` everywhere and hand its cores to the remaining residents."""
        directives = []
        for node in self.cluster.nodes_of(job_id):
            directives.extend(self.on_job_end(node, job_id))
        self.cluster.release(job_id)
        for d in directives:
            self.cluster.set_counts(d.node, {**self.cluster.residents[d.node], d.job_id: d.cores})
        # loans made by or to the finished job are settled now
        for key in [k for k, e in self._edges.items() if k[1] == job_id or e.lender == job_id]:
            self._drop_edge(key)
        self.forget(job_id)
        return directives

    def _drop_edge(self, key) -> None:
        edge = self._edges.pop(key, None)
        if edge is not None:
            self._loans[edge.lender] -= 1
            if not self._loans[edge.lender]:
                del self._loans[edge.lender]
