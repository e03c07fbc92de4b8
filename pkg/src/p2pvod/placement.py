"""Map a replication plan onto concrete serving peers.

Placement functions never mutate the peers they are given; they work on a
private snapshot of each peer's stored set and byte load and return the
assignment for the caller to apply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .cluster import SERVING, Movie, Peer
from .replication import ReplicationPlan

PLACEMENTS = ("slf", "random", "round_robin")


class UndefinedWeightError(ValueError):
    pass


def movie_weight(rate: float, popularity: float, replicas: int, scale: float = 1.0) -> float:
    """W_m = A_m * X * q_m / R_m."""
    if replicas < 1:
        raise UndefinedWeightError("weight is undefined for a movie with no replicas")
    w = rate * scale * popularity / replicas
    if w < 0 or not math.isfinite(w):
        raise ValueError(f"weight must be finite and >= 0, got {w}")
    return w


@dataclass
class PlacementResult:
    pairs: List[Tuple[int, int]] = field(default_factory=list)  # (movie id, peer id)
    leftover: Dict[int, int] = field(default_factory=dict)
    # (movie id, chosen peer id, {eligible peer id: load at decision time})
    log: List[Tuple[int, int, Dict[int, int]]] = field(default_factory=list)

    def _miss(self, mid: int) -> None:
        self.leftover[mid] = self.leftover.get(mid, 0) + 1


class _Slot:
    """Snapshot of one peer's capacity used while a placement is computed."""

    def __init__(self, peer: Peer):
        self.id = peer.id
        self.capacity = peer.storage_bytes
        self.load = peer.used_bytes
        self.stored = set(peer.stored)
        self.max_movies = peer.max_movies
        self.active = peer.role == SERVING and peer.online

    def eligible(self, movie: Movie) -> bool:
        if not self.active or movie.id in self.stored:
            return False
        if self.load + movie.size_bytes > self.capacity:
            return False
        return self.max_movies is None or len(self.stored) < self.max_movies

    def take(self, movie: Movie) -> None:
        self.stored.add(movie.id)
        self.load += movie.size_bytes


def _slots(peers: Sequence[Peer]) -> List[_Slot]:
    return sorted((_Slot(p) for p in peers), key=lambda s: s.id)


def _replica_order(plan: ReplicationPlan, weights: Optional[Mapping[int, float]]) -> List[int]:
    """Expand the plan into one entry per copy, heaviest movie first, ties by id."""
    weights = weights or {}
    mids = sorted((m for m, r in plan.counts.items() if r > 0), key=lambda m: (-weights.get(m, 0.0), m))
    return [m for m in mids for _ in range(plan.counts[m])]


def plan_weights(plan: ReplicationPlan, rates: Mapping[int, float], catalog: Mapping[int, Movie], scale: float = 1.0) -> Dict[int, float]:
    return {
        mid: movie_weight(rates.get(mid, 0.0), catalog[mid].popularity, r, scale)
        for mid, r in plan.counts.items() if r > 0
    }


def smallest_load_first(
    plan: ReplicationPlan,
    weights: Mapping[int, float],
    peers: Sequence[Peer],
    catalog: Mapping[int, Movie],
    per_round: Optional[int] = None,
) -> PlacementResult:
    """Place the heaviest replicas on the least-loaded eligible peers.

    Replicas go out in rounds of ``per_round`` copies; a round never uses
    the same peer twice, and within it each copy lands on the eligible,
    not-yet-used peer with the smallest byte load (ties: lowest id). A copy
    with no eligible peer left at all is reported in ``leftover``. A copy
    whose only eligible peers were already used this round waits for the
    next round.
    """
    if per_round is not None and per_round < 1:
        raise ValueError("per_round must be >= 1")
    slots = _slots(peers)
    result = PlacementResult()
    queue = _replica_order(plan, weights)
    while queue:
        q = per_round
        if q is None:
            q = max(1, sum(1 for s in slots if s.active and (s.max_movies is None or len(s.stored) < s.max_movies)))
        used = set()
        deferred = []
        placed = 0
        for i, mid in enumerate(queue):
            if placed == q:
                deferred.extend(queue[i:])
                break
            movie = catalog[mid]
            eligible = [s for s in slots if s.eligible(movie)]
            if not eligible:
                result._miss(mid)
                continue
            free = [s for s in eligible if s.id not in used]
            if not free:
                deferred.append(mid)
                continue
            target = min(free, key=lambda s: (s.load, s.id))
            result.log.append((mid, target.id, {s.id: s.load for s in free}))
            target.take(movie)
            used.add(target.id)
            result.pairs.append((mid, target.id))
            placed += 1
        if placed == 0:
            for mid in deferred:
                result._miss(mid)
            break
        queue = deferred
    return result


def random_placement(
    plan: ReplicationPlan,
    peers: Sequence[Peer],
    stream: np.random.Generator,
    catalog: Mapping[int, Movie],
    weights: Optional[Mapping[int, float]] = None,
) -> PlacementResult:
    slots = _slots(peers)
    result = PlacementResult()
    for mid in _replica_order(plan, weights):
        movie = catalog[mid]
        eligible = [s for s in slots if s.eligible(movie)]
        if not eligible:
            result._miss(mid)
            continue
        target = eligible[int(stream.integers(len(eligible)))]
        result.log.append((mid, target.id, {s.id: s.load for s in eligible}))
        target.take(movie)
        result.pairs.append((mid, target.id))
    return result


def round_robin_placement(
    plan: ReplicationPlan,
    peers: Sequence[Peer],
    catalog: Mapping[int, Movie],
    weights: Optional[Mapping[int, float]] = None,
    start: int = 0,
) -> PlacementResult:
    """Cycle through peers in id order, skipping any that cannot take the copy."""
    slots = _slots(peers)
    result = PlacementResult()
    pos = start % len(slots) if slots else 0
    for mid in _replica_order(plan, weights):
        movie = catalog[mid]
        for k in range(len(slots)):
            s = slots[(pos + k) % len(slots)]
            if s.eligible(movie):
                result.log.append((mid, s.id, {x.id: x.load for x in slots if x.eligible(movie)}))
                s.take(movie)
                result.pairs.append((mid, s.id))
                pos = (pos + k + 1) % len(slots)
                break
        else:
            result._miss(mid)
    return result


def place(
    name: str,
    plan: ReplicationPlan,
    weights: Mapping[int, float],
    peers: Sequence[Peer],
    catalog: Mapping[int, Movie],
    stream: Optional[np.random.Generator] = None,
    per_round: Optional[int] = None,
) -> PlacementResult:
    if name == "slf":
        return smallest_load_first(plan, weights, peers, catalog, per_round)
    if name == "random":
        if stream is None:
            raise ValueError("random placement needs an RNG stream")
        return random_placement(plan, peers, stream, catalog, weights)
    if name == "round_robin":
        return round_robin_placement(plan, peers, catalog, weights)
    raise ValueError(f"unknown placement {name!r}; valid placements: {', '.join(PLACEMENTS)}")
