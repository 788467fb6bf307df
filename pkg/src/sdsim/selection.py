"""Choosing running jobs ("mates") to shrink so a new job can start now.

The objective is the smallest Performance Impact, i.e. the sum of the mates'
penalties, subject to every penalty staying below the cutoff and the mates'
node counts adding up to the new job's node count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError

_EPS = 1e-9


@dataclass(frozen=True)
class MateCandidate:
    job_id: int
    weight: int
    penalty: float
    predicted_end: int
    nodes: tuple[int, ...]
    # node -> (cores the mate keeps, cores handed to the new job)
    shares: dict[int, tuple[int, int]] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.weight < 1:
            raise ValueError(f"mate {self.job_id}: weight must be >= 1")
        if self.penalty < 1:
            raise ValueError(f"mate {self.job_id}: penalty {self.penalty} below 1")


@dataclass(frozen=True)
class MateSolution:
    mates: tuple[MateCandidate, ...]
    performance_impact: float
    free_nodes_used: tuple[int, ...] = ()

    @property
    def mate_ids(self) -> tuple[int, ...]:
        return tuple(sorted(m.job_id for m in self.mates))

    @property
    def weight(self) -> int:
        return sum(m.weight for m in self.mates) + len(self.free_nodes_used)

    @property
    def placement(self) -> dict[int, tuple[int, int]]:
        out = {}
        for m in self.mates:
            out.update(m.shares)
        return out


@dataclass
class CutoffPolicy:
    """Static cutoff (fixed value) or dynamic (mean estimated slowdown of running jobs)."""

    kind: str = "dynamic"
    value: float = math.inf

    def __post_init__(self):
        if self.kind not in ("static", "dynamic"):
            raise ConfigError(f"cutoff kind must be static or dynamic, got {self.kind!r}")
        if self.kind == "static" and not self.value > 1:
            raise ConfigError(f"static max slowdown must be > 1, got {self.value}")

    @classmethod
    def parse(cls, text) -> "CutoffPolicy":
        if isinstance(text, CutoffPolicy):
            return text
        s = str(text).strip().lower()
        if s in ("dyn", "dynamic", "dynavgsd"):
            return cls("dynamic")
        if s in ("inf", "infinite", "infinity"):
            return cls("static", math.inf)
        try:
            return cls("static", float(s))
        except ValueError:
            raise ConfigError(f"max slowdown must be a number, 'inf' or 'dyn', got {text!r}") from None

    def label(self) -> str:
        if self.kind == "dynamic":
            return "dyn"
        return "inf" if math.isinf(self.value) else f"{self.value:g}"


def penalty(wait_time: float, increase: float, req_time: float) -> float:
    """Estimated slowdown of a job after it has been shrunk."""
    if req_time <= 0:
        raise ValueError("requested time must be positive")
    return (wait_time + increase + req_time) / req_time


def update_cutoff(policy: CutoffPolicy, running_slowdowns: Iterable[float]) -> float:
    if policy.kind == "static":
        return policy.value
    values = list(running_slowdowns)
    if not values:
        return math.inf
    return math.fsum(values) / len(values)


def _impact(mates: Sequence[MateCandidate]) -> float:
    return math.fsum(m.penalty for m in sorted(mates, key=lambda m: m.job_id))


def _solution(mates, free_nodes, weight) -> MateSolution:
    mates = tuple(sorted(mates, key=lambda m: m.job_id))
    need = weight - sum(m.weight for m in mates)
    return MateSolution(mates, _impact(mates), tuple(free_nodes[:need]))


def _check_args(max_mates, candidate_cap):
    if max_mates < 1:
        raise ConfigError("max mates must be >= 1")
    if candidate_cap < 1:
        raise ConfigError("candidate cap must be >= 1")


def select_mates(weight: int, candidates: Sequence[MateCandidate], free_nodes: Sequence[int] = (),
                 max_slowdown: float = math.inf, max_mates: int = 2,
                 candidate_cap: int = 64) -> MateSolution | None:
    """Minimum-impact set of at most ``max_mates`` mates whose weights sum to ``weight``.

    Free nodes, when given, can top up the weight at zero penalty.  Ties on
    impact go to the lexicographically smallest tuple of mate ids.
    """
    _check_args(max_mates, candidate_cap)
    free_nodes = sorted(free_nodes)
    pool = sorted(
        (c for c in candidates if c.penalty < max_slowdown and c.weight <= weight),
        key=lambda c: (c.penalty, c.job_id),
    )[:candidate_cap]
    n_free = len(free_nodes)
    best_key = None
    best = None

    def visit(start, chosen, wsum, pi):
        nonlocal best_key, best
        if chosen and weight - wsum <= n_free:
            key = (_impact(chosen), tuple(sorted(c.job_id for c in chosen)))
            if best_key is None or key < best_key:
                best_key, best = key, list(chosen)
        if len(chosen) == max_mates:
            return
        for k in range(start, len(pool)):
            c = pool[k]
            # pool is sorted by penalty, so later entries cannot do better
            if best_key is not None and pi + c.penalty > best_key[0] + _EPS:
                break
            if wsum + c.weight > weight:
                continue
            chosen.append(c)
            visit(k + 1, chosen, wsum + c.weight, pi + c.penalty)
            chosen.pop()

    visit(0, [], 0, 0.0)
    if best is None:
        return None
    return _solution(best, free_nodes, weight)


def brute_force_select(weight: int, candidates: Sequence[MateCandidate], free_nodes: Sequence[int] = (),
                       max_slowdown: float = math.inf, max_mates: int = 2,
                       candidate_cap: int = 64) -> MateSolution | None:
    """Exhaustive reference for :func:`select_mates` (no candidate cap applied)."""
    _check_args(max_mates, candidate_cap)
    free_nodes = sorted(free_nodes)
    eligible = [c for c in candidates if c.penalty < max_slowdown]
    best_key = None
    best = None
    for size in range(1, max_mates + 1):
        for combo in itertools.combinations(eligible, size):
            wsum = sum(c.weight for c in combo)
            if wsum > weight or weight - wsum > len(free_nodes):
                continue
            key = (_impact(combo), tuple(sorted(c.job_id for c in combo)))
            if best_key is None or key < best_key:
                best_key, best = key, combo
    if best is None:
        return None
    return _solution(best, free_nodes, weight)
