"""Replica-count strategies: the proposed batch algorithm and three baselines.

Every strategy maps a batch of measured request rates to a
:class:`ReplicationPlan` holding a target replica count per movie. The
simulator copies only the shortfall between a target and the live holders.
Baselines take an explicit ``budget`` so they can be compared against the
proposed algorithm at an equal total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .cluster import SERVING, Movie, Peer

STRATEGIES = ("proposed", "random", "minreq", "maxhit")


@dataclass(frozen=True)
class ReplicationPlan:
    counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for mid, r in self.counts.items():
            if r < 0:
                raise ValueError(f"negative replica count for movie {mid}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class RequestBatch:
    entries: Tuple[Tuple[int, float], ...]  # (movie id, measured requests/s)
    window_s: float = 1.0

    def __post_init__(self):
        ids = [mid for mid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("batch has duplicate movie entries")
        if any(rate < 0 for _, rate in self.entries):
            raise ValueError("batch rates must be >= 0")

    @classmethod
    def from_counts(cls, counts: Mapping[int, int], window_s: float) -> "RequestBatch":
        return cls(tuple((mid, c / window_s) for mid, c in sorted(counts.items()) if c > 0), window_s)

    @property
    def movie_ids(self) -> List[int]:
        return [mid for mid, _ in self.entries]


def _candidate_peers(movie: Movie, peers: Iterable[Peer]) -> List[Peer]:
    """Online serving peers with free storage for ``movie``."""
    return [p for p in peers if p.role == SERVING and p.online and p.has_room_for(movie)]


def _free_bytes(peers: Iterable[Peer]) -> int:
    return sum(max(p.free_bytes, 0) for p in peers if p.role == SERVING and p.online)


def shrink_to_storage(counts: Dict[int, int], catalog: Mapping[int, Movie], capacity_bytes: int) -> Dict[int, int]:
    """Drop copies, least popular movies first, until the plan fits ``capacity_bytes``.

    Counts above one are trimmed before any movie loses its last copy.
    """
    counts = dict(counts)
    order = sorted(counts, key=lambda mid: (catalog[mid].popularity, -mid))  # least popular first

    def needed():
        return sum(catalog[mid].size_bytes * r for mid, r in counts.items())

    for floor in (1, 0):
        while needed() > capacity_bytes:
            trimmed = False
            for mid in order:
                if counts[mid] > floor:
                    counts[mid] -= 1
                    trimmed = True
                    if needed() <= capacity_bytes:
                        break
            if not trimmed:
                break
    return counts


def _finish(counts: Dict[int, int], catalog, peers) -> ReplicationPlan:
    peers = list(peers)
    counts = shrink_to_storage(counts, catalog, _free_bytes(peers))
    return ReplicationPlan({mid: r for mid, r in counts.items()})


def proposed_replicas(batch: RequestBatch, catalog: Mapping[int, Movie], peers: Sequence[Peer]) -> ReplicationPlan:
    """Per-movie replica counts from measured demand, popularity and live peers.

    For each batched movie, taken in descending popularity:
    ``T_R`` is the number of online serving peers with room for a new copy,
    ``omega = (A / max(A) + q) / 2`` mixes normalized demand with popularity
    and ``R = min(T_R, max(1, ceil(omega * T_R)))``. A movie with ``T_R = 0``
    gets no copies.
    """
    if not batch.entries:
        return ReplicationPlan({})
    rates = dict(batch.entries)
    peak = max(rates.values())
    order = sorted(rates, key=lambda mid: (-catalog[mid].popularity, mid))
    counts = {}
    for mid in order:
        movie = catalog[mid]
        t_r = len(_candidate_peers(movie, peers))
        if t_r == 0:
            counts[mid] = 0
            continue
        a_hat = rates[mid] / peak if peak > 0 else 0.0
        omega = (a_hat + movie.popularity) / 2.0
        counts[mid] = min(t_r, max(1, math.ceil(round(omega * t_r, 9))))
    return _finish(counts, catalog, peers)


def _batch_movies(batch: RequestBatch, catalog: Mapping[int, Movie]) -> List[int]:
    return sorted(batch.movie_ids, key=lambda mid: (-catalog[mid].popularity, mid))


def _check_budget(budget: int) -> None:
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")


def random_replicas(
    batch: RequestBatch,
    catalog: Mapping[int, Movie],
    peers: Sequence[Peer],
    budget: int,
    stream: np.random.Generator,
) -> ReplicationPlan:
    _check_budget(budget)
    movies = _batch_movies(batch, catalog)
    if not movies or budget == 0:
        return ReplicationPlan({})
    picks = stream.integers(0, len(movies), size=budget)
    counts = {mid: 0 for mid in movies}
    for i in picks:
        counts[movies[int(i)]] += 1
    return _finish(counts, catalog, peers)


def maxhit_replicas(batch: RequestBatch, catalog: Mapping[int, Movie], peers: Sequence[Peer], budget: int) -> ReplicationPlan:
    """Spread ``budget`` evenly; the remainder goes to the most popular movies."""
    _check_budget(budget)
    movies = _batch_movies(batch, catalog)
    if not movies or budget == 0:
        return ReplicationPlan({})
    base, extra = divmod(budget, len(movies))
    counts = {mid: base + (1 if i < extra else 0) for i, mid in enumerate(movies)}
    return _finish(counts, catalog, peers)


def minreq_replicas(batch: RequestBatch, catalog: Mapping[int, Movie], peers: Sequence[Peer], budget: int) -> ReplicationPlan:
    """Split ``budget`` in proportion to popularity with largest-remainder rounding."""
    _check_budget(budget)
    movies = _batch_movies(batch, catalog)
    if not movies or budget == 0:
        return ReplicationPlan({})
    q = np.array([catalog[mid].popularity for mid in movies], dtype=float)
    quotas = budget * q / q.sum() if q.sum() > 0 else np.full(len(movies), budget / len(movies))
    floors = np.floor(quotas + 1e-12).astype(int)
    left = budget - int(floors.sum())
    frac = quotas - floors
    # stable sort keeps the more popular movie first on equal remainders
    for i in np.argsort(-frac, kind="stable")[:left]:
        floors[i] += 1
    counts = {mid: int(c) for mid, c in zip(movies, floors)}
    return _finish(counts, catalog, peers)


def compute_plan(
    name: str,
    batch: RequestBatch,
    catalog: Mapping[int, Movie],
    peers: Sequence[Peer],
    stream: Optional[np.random.Generator] = None,
    budget: Optional[int] = None,
) -> ReplicationPlan:
    """Dispatch by strategy name. Baselines default to the proposed plan's total."""
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; valid strategies: {', '.join(STRATEGIES)}")
    if name == "proposed":
        return proposed_replicas(batch, catalog, peers)
    if budget is None:
        budget = proposed_replicas(batch, catalog, peers).total
    if name == "random":
        if stream is None:
            raise ValueError("random strategy needs an RNG stream")
        return random_replicas(batch, catalog, peers, budget, stream)
    if name == "minreq":
        return minreq_replicas(batch, catalog, peers, budget)
    return maxhit_replicas(batch, catalog, peers, budget)
