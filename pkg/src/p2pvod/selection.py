"""Serving-peer selection for a requesting peer, with failover down to the proxy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .cluster import Cluster

PROXY = "proxy"
FAILED = "failed"

Source = Union[int, str]


@dataclass(frozen=True)
class ResourceSnapshot:
    peer_id: int
    free_uplink_channels: int
    online: bool = True

    def __post_init__(self):
        if self.free_uplink_channels < 0:
            raise ValueError("free_uplink_channels must be >= 0")


def least_load_first(candidates: Sequence[ResourceSnapshot]) -> Source:
    """Pick the online candidate with the most free uplink channels.

    Ties go to the lowest peer id. Returns :data:`PROXY` when nobody
    qualifies, including for an empty list.
    """
    ranked = sorted(candidates, key=lambda c: (-c.free_uplink_channels, c.peer_id))
    for c in ranked:
        if c.online and c.free_uplink_channels >= 1:
            return c.peer_id
    return PROXY


def snapshots(cluster: Cluster, movie_id: int, exclude: Iterable[int] = ()) -> list[ResourceSnapshot]:
    """Fresh resource snapshots of every registered holder of ``movie_id``."""
    skip = set(exclude)
    return [
        ResourceSnapshot(p.id, max(p.free_channels, 0), p.online)
        for p in cluster.holders(movie_id, online_only=False)
        if p.id not in skip
    ]


def select_source(cluster: Cluster, movie_id: int, exclude: Iterable[int] = ()) -> Source:
    """Least-load peer for ``movie_id``, else the proxy if it has a free channel, else FAILED."""
    choice = least_load_first(snapshots(cluster, movie_id, exclude))
    if choice != PROXY:
        return choice
    return PROXY if cluster.proxy.free_channels >= 1 else FAILED


def failover(session, cluster: Cluster, failed_peer: Optional[int] = None) -> Source:
    """New source for a session whose current serving peer just dropped it.

    Re-runs discovery against the registry without the failed peer. The
    caller resumes playback at ``session.position_s`` on the returned source.
    """
    if failed_peer is None and isinstance(session.source, int):
        failed_peer = session.source
    exclude = () if failed_peer is None else (failed_peer,)
    return select_source(cluster, session.movie_id, exclude)
