"""Backfill scheduling with the slowdown-driven malleable extension.

Each pass visits the queue in priority order.  A job first tries a static
start on free nodes; if that is impossible and the job is malleable, the
pass compares the static end estimate (wait + requested time) against the
malleable one (requested time + predicted shrink increase) and, when the
malleable one is strictly earlier, looks for mates to shrink.  Any start,
static or malleable, must leave every higher-priority reservation intact.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .runtime_model import ModelKind, ceil_div, elapsed_for_work, predict_increase
from .selection import MateCandidate, MateSolution, select_mates, update_cutoff


class Profile:
    """Free-node count over time, net of reservations.

    ``avail[i]`` holds on ``[times[i], times[i+1])``; the last entry extends
    forever.
    """

    def __init__(self, now: int, free_now: int, release_times: list[int]):
        counts: dict[int, int] = {}
        for t in release_times:
            counts[t] = counts.get(t, 0) + 1
        self._fill(now, free_now, counts)

    @classmethod
    def from_counts(cls, now: int, free_now: int, releases: dict[int, int]) -> "Profile":
        """Build from release time -> number of nodes released then."""
        p = cls.__new__(cls)
        p._fill(now, free_now, releases)
        return p

    def _fill(self, now, free_now, releases):
        times = [now]
        avail = [free_now]
        for t in sorted(releases):
            k = releases[t]
            if not k:
                continue
            if t <= now:
                raise ValueError("busy nodes must release strictly after now")
            times.append(t)
            avail.append(avail[-1] + k)
        self.times = times
        self.avail = avail

    def copy(self) -> "Profile":
        p = Profile.__new__(Profile)
        p.times = list(self.times)
        p.avail = list(self.avail)
        return p

    def adopt(self, other: "Profile") -> None:
        self.times, self.avail = other.times, other.avail

    def _index(self, t: int) -> int:
        return bisect.bisect_right(self.times, t) - 1

    def fits(self, start: int, duration: int, nodes: int) -> bool:
        i = max(0, self._index(start))
        end = start + duration
        times, avail = self.times, self.avail
        n = len(times)
        while i < n and times[i] < end:
            if avail[i] < nodes:
                return False
            i += 1
        return True

    def earliest_fit(self, nodes: int, duration: int) -> int:
        times, avail = self.times, self.avail
        n = len(times)
        i = 0
        while i < n:
            if avail[i] < nodes:
                i += 1
                continue
            end = times[i] + duration
            j = i + 1
            while j < n and times[j] < end and avail[j] >= nodes:
                j += 1
            if j == n or times[j] >= end:
                return times[i]
            i = j + 1
        raise ValueError(f"no window of {nodes} nodes ever opens")

    def _split(self, t: int) -> int:
        i = self._index(t)
        if self.times[i] == t:
            return i
        self.times.insert(i + 1, t)
        self.avail.insert(i + 1, self.avail[i])
        return i + 1

    def reserve(self, start: int, duration: int, nodes: int) -> None:
        if duration <= 0:
            return
        a = self._split(start)
        b = self._split(start + duration)
        for k in range(a, b):
            self.avail[k] -= nodes


@dataclass
class SchedulingDecision:
    kind: str  # static_start | malleable_start | reserve | skip
    job_id: int
    start_time: int | None = None
    nodes: tuple[int, ...] = ()
    solution: MateSolution | None = None
    static_end: int | None = None
    mall_end: int | None = None


@dataclass
class MateUpdate:
    job_id: int
    new_end: int
    penalty: float


@dataclass
class _MatePool:
    ids: list[int] = field(default_factory=list)
    weight: np.ndarray = None
    min_give: np.ndarray = None
    pred_end: np.ndarray = None
    since_submit: np.ndarray = None
    req: np.ndarray = None
    rem: np.ndarray = None
    r_shrunk: np.ndarray = None
    r_cur: np.ndarray = None
    min_weight: int = 0
    max_end: int = 0
    # (nodes, ranks per node) -> shortest duration known to find no mates
    no_mates: dict = field(default_factory=dict)


def _reachable(weights: list[int], target: int, slack: int, max_items: int) -> bool:
    """Can 1..max_items of ``weights`` sum to something in [target - slack, target]?"""
    mask = (1 << (target + 1)) - 1
    reach = [1] + [0] * max_items
    for a in weights:
        for k in range(max_items, 0, -1):
            reach[k] |= (reach[k - 1] << a) & mask
    want = mask ^ ((1 << max(0, target - slack)) - 1)
    return any(r & want for r in reach[1:])


class Scheduler:
    """Runs backfill passes against a live simulation.

    ``sim`` supplies ``cluster``, ``nodemgr``, ``running`` (job id ->
    running record), ``queue`` and the ``start_static`` / ``start_malleable``
    actions.
    """

    def __init__(self, config, sim):
        self.config = config
        self.sim = sim
        cpn = config.cluster.cores_per_node
        self.nominal_share = math.floor(config.sharing_factor * cpn + 1e-9)
        self._pool: _MatePool | None = None
        self._cutoff: float | None = None
        self._durations: dict[tuple[int, int], int] = {}

    # -- helpers -----------------------------------------------------------

    def build_profile(self, now: int) -> Profile:
        """Free nodes over time; a busy node frees up when its last resident is predicted to end."""
        cluster = self.sim.cluster
        running = self.sim.running
        floor = now + 1
        releases: dict[int, int] = {}
        for rj in running.values():
            t = max(rj.predicted_end, floor)
            releases[t] = releases.get(t, 0) + rj.job.requested_nodes
        # a shared node was counted once per resident; keep only the later release
        for node in self.sim.nodemgr.shared_nodes():
            t = min(max(running[j].predicted_end, floor) for j in cluster.residents[node])
            releases[t] -= 1
        return Profile.from_counts(now, cluster.free_count(), releases)

    def cutoff(self, now: int) -> float:
        if self._cutoff is None:
            self._cutoff = update_cutoff(self.config.cutoff, self.sim.running_slowdowns(now))
        return self._cutoff

    def mall_duration(self, job, share: int) -> int:
        """Predicted run length of ``job`` at ``share`` cores on each of its nodes."""
        key = (job.id, share)
        d = self._durations.get(key)
        if d is None:
            cpn = self.config.cluster.cores_per_node
            slot = job.requested_time * ceil_div(cpn, share)
            inc = predict_increase(job, [(slot, [share] * job.requested_nodes)], ModelKind.WORST_CASE, cpn)
            d = self._durations[key] = job.requested_time + inc
        return d

    def _mate_pool(self, now: int) -> _MatePool:
        if self._pool is not None:
            return self._pool
        rows = []
        for job_id in sorted(self.sim.running):
            info = self.sim.mate_info(job_id)
            if info is None:
                continue
            rj = self.sim.running[job_id]
            job = rj.job
            rem = max(0, job.requested_time * rj.exec.req_cpus - rj.exec.done_at(now))
            rows.append((job_id, job.requested_nodes, info.min_give, rj.predicted_end,
                         now - job.submit_time, job.requested_time, rem, info.r_shrunk, info.r_cur))
        pool = _MatePool()
        pool.ids = [r[0] for r in rows]
        cols = list(zip(*rows)) if rows else [()] * 9
        (pool.weight, pool.min_give, pool.pred_end, pool.since_submit, pool.req,
         pool.rem, pool.r_shrunk, pool.r_cur) = (np.array(c, dtype=np.int64) for c in cols[1:])
        if rows:
            pool.min_weight = int(pool.weight.min())
            pool.max_end = int(pool.pred_end.max())
        self._pool = pool
        return pool

    def forget(self, job_id: int) -> None:
        for key in [k for k in self._durations if k[0] == job_id]:
            del self._durations[key]

    # -- public operations -------------------------------------------------

    def estimate_wait_time(self, job, now: int) -> int:
        """Static wait estimate for ``job`` behind the reservations of earlier queued jobs."""
        profile = self.build_profile(now)
        for q in self.sim.queue:
            if q.id == job.id:
                break
            t = profile.earliest_fit(q.requested_nodes, q.requested_time)
            profile.reserve(t, q.requested_time, q.requested_nodes)
            if self.config.easy:
                break
        return profile.earliest_fit(job.requested_nodes, job.requested_time) - now

    def backfill_pass(self, now: int) -> list[SchedulingDecision]:
        queue = list(self.sim.queue)
        if not queue:
            return []
        self._pool = None
        self._cutoff = None
        profile = self.build_profile(now)
        depth = self.config.backfill_depth or len(queue)
        decisions = []
        reserved = False
        sd = self.config.policy == "sd"
        for job in queue[:depth]:
            if self.sim.cluster.free_count() == 0 and (
                    not sd or not len(self._mate_pool(now).ids)):
                break
            d = self.schedule(job, now, profile, may_reserve=not (self.config.easy and reserved))
            if d.kind == "reserve":
                reserved = True
            decisions.append(d)
        return decisions

    def schedule(self, job, now: int, profile: Profile | None = None,
                 may_reserve: bool = True) -> SchedulingDecision:
        if profile is None:
            profile = self.build_profile(now)
        cluster = self.sim.cluster
        w, req = job.requested_nodes, job.requested_time
        if cluster.free_count() >= w and profile.fits(now, req, w):
            nodes = tuple(cluster.free_nodes()[:w])
            profile.reserve(now, req, w)
            self.sim.start_static(job, list(nodes), now)
            self._pool = None
            return SchedulingDecision("static_start", job.id, now, nodes)
        start = profile.earliest_fit(w, req)
        if self.config.policy == "sd" and job.malleable:
            d = self._try_malleable(job, now, profile, start)
            if d is not None:
                return d
        if not may_reserve:
            return SchedulingDecision("skip", job.id)
        profile.reserve(start, req, w)
        return SchedulingDecision("reserve", job.id, start)

    # -- malleable path ----------------------------------------------------

    def _try_malleable(self, job, now, profile: Profile, static_start: int) -> SchedulingDecision | None:
        share = self.nominal_share
        if share < job.ranks_per_node:
            return None
        static_end = static_start - now + job.requested_time
        mall_end = self.mall_duration(job, share)
        if not static_end > mall_end:
            return None
        pool = self._mate_pool(now)
        w = job.requested_nodes
        d = mall_end
        if not pool.ids or pool.min_weight > w or pool.max_end < now + d:
            return None
        # Within one pool the profile only tightens and a longer duration only
        # removes or worsens candidates, so an earlier miss settles this job too.
        key = (w, job.ranks_per_node)
        if d >= pool.no_mates.get(key, math.inf):
            return None
        sol, cands, truncated = self._select(job, now, profile, pool, d)
        if sol is None:
            if not truncated:
                pool.no_mates[key] = min(d, pool.no_mates.get(key, math.inf))
            return None
        return self._commit(job, now, profile, sol, static_end)

    def _select(self, job, now, profile, pool, d):
        cfg = self.config
        w = job.requested_nodes
        cutoff = self.cutoff(now)
        mask = (pool.weight <= w) & (pool.min_give >= job.ranks_per_node) & (pool.pred_end >= now + d)
        if not mask.any():
            return None, [], False
        idx = np.nonzero(mask)[0]
        rem, r_s = pool.rem[idx], pool.r_shrunk[idx]
        future = np.where(rem > d * r_s,
                          d + -(-(rem - d * r_s) // pool.r_cur[idx]),
                          -(-rem // r_s))
        pen = (pool.since_submit[idx] + future) / pool.req[idx]
        keep = pen < cutoff
        idx, future, pen = idx[keep], future[keep], pen[keep]
        if not len(idx):
            return None, [], False
        n_free = self.sim.cluster.free_count() if cfg.use_free_nodes else 0
        if not _reachable(pool.weight[idx].tolist(), w, n_free, cfg.max_mates):
            return None, [], False
        order = np.lexsort((np.array([pool.ids[i] for i in idx]), pen))
        cands = []
        truncated = False
        for k in order:
            i = idx[k]
            pred_end = int(pool.pred_end[i])
            new_end = now + int(future[k])
            wt = int(pool.weight[i])
            if new_end > pred_end and not profile.fits(pred_end, new_end - pred_end, wt):
                continue
            job_id = pool.ids[i]
            cands.append(MateCandidate(job_id, wt, float(pen[k]), pred_end,
                                       tuple(self.sim.cluster.nodes_of(job_id)),
                                       self.sim.mate_info(job_id).shares))
            if len(cands) >= cfg.candidate_cap:
                truncated = True
                break
        if not cands:
            return None, [], False
        free = self.sim.cluster.free_nodes() if cfg.use_free_nodes else []
        return select_mates(w, cands, free, cutoff, cfg.max_mates, cfg.candidate_cap), cands, truncated

    def _commit(self, job, now, profile, sol, static_end):
        """Re-check the chosen mates at the real shrink and start the job if it still pays off."""
        cpn = self.config.cluster.cores_per_node
        cutoff = self.cutoff(now)

        gives = [give for m in sol.mates for _, give in m.shares.values()]
        gives += [cpn] * len(sol.free_nodes_used)
        actual = self.mall_duration(job, min(gives))
        if not static_end > actual:
            return None
        updates = []
        for m in sol.mates:
            rj = self.sim.running[m.job_id]
            if m.predicted_end < now + actual:
                return None
            info = self.sim.mate_info(m.job_id)
            rem = max(0, rj.job.requested_time * rj.exec.req_cpus - rj.exec.done_at(now))
            fut = elapsed_for_work(rem, [(actual, info.r_shrunk)], info.r_cur)
            p = (now - rj.job.submit_time + fut) / rj.job.requested_time
            if not p < cutoff:
                return None
            updates.append(MateUpdate(m.job_id, now + fut, p))

        trial = profile.copy()
        for m, u in zip(sol.mates, updates):
            if u.new_end > m.predicted_end:
                span = u.new_end - m.predicted_end
                if not trial.fits(m.predicted_end, span, m.weight):
                    return None
                trial.reserve(m.predicted_end, span, m.weight)
        if sol.free_nodes_used:
            k = len(sol.free_nodes_used)
            if not trial.fits(now, actual, k):
                return None
            trial.reserve(now, actual, k)
        profile.adopt(trial)

        nodes = self.sim.start_malleable(job, sol, now, static_end, actual, cutoff, updates)
        self._pool = None
        return SchedulingDecision("malleable_start", job.id, now, tuple(nodes), sol, static_end, actual)
