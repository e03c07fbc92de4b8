"""Domain types for one proxy cluster: movies, peers, the proxy and the cluster
itself, plus the availability and capacity-validity helpers built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set

SERVING = "serving"
NON_SERVING = "non_serving"


class DegenerateProfileError(ValueError):
    """Raised when a churn profile has zero mean uptime and zero mean downtime."""


class UnknownPeerError(KeyError):
    pass


@dataclass(frozen=True)
class Movie:
    id: int  # popularity rank, 1 = most popular
    size_bytes: int
    duration_s: float
    popularity: float
    arrival_rate: float = 0.0  # requests per second
    channels: int = 1
    num_blocks: int = 100

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"movie {self.id}: size_bytes must be > 0")
        if self.duration_s <= 0:
            raise ValueError(f"movie {self.id}: duration_s must be > 0")
        if not 0.0 <= self.popularity <= 1.0:
            raise ValueError(f"movie {self.id}: popularity must lie in [0, 1]")
        if self.channels < 1:
            raise ValueError(f"movie {self.id}: channels must be >= 1")
        if self.num_blocks < 1:
            raise ValueError(f"movie {self.id}: num_blocks must be >= 1")


@dataclass(frozen=True)
class ChurnProfile:
    mean_up_s: float
    mean_dn_s: float

    def __post_init__(self):
        if self.mean_up_s < 0 or self.mean_dn_s < 0:
            raise ValueError("churn means must be nonnegative")


def availability(churn: ChurnProfile) -> tuple[float, float]:
    """Return ``(A_up, A_dn)``, the long-run fractions of time a peer is up / down."""
    total = churn.mean_up_s + churn.mean_dn_s
    if total <= 0:
        raise DegenerateProfileError("mean uptime and downtime are both zero")
    a_up = churn.mean_up_s / total
    return a_up, 1.0 - a_up


class _Store:
    """Byte-bounded movie store shared by peers and the proxy."""

    capacity_bytes: int
    used_bytes: int
    max_movies: Optional[int]

    def movie_ids(self) -> Set[int]:
        raise NotImplementedError

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - self.used_bytes

    def has_room_for(self, movie: Movie) -> bool:
        if movie.size_bytes > self.free_bytes:
            return False
        return self.max_movies is None or len(self.movie_ids()) < self.max_movies


@dataclass
class Peer(_Store):
    id: int
    role: str
    storage_bytes: int
    uplink_channels: int
    churn: ChurnProfile
    online: bool = True
    stored: Set[int] = field(default_factory=set)
    active_streams: int = 0
    max_movies: Optional[int] = None
    used_bytes: int = 0

    @property
    def capacity_bytes(self) -> int:
        return self.storage_bytes

    @property
    def free_channels(self) -> int:
        return self.uplink_channels - self.active_streams

    def movie_ids(self) -> Set[int]:
        return self.stored

    def add_movie(self, movie: Movie) -> None:
        if self.role != SERVING:
            raise ValueError(f"peer {self.id} is not a serving peer")
        if movie.id in self.stored:
            raise ValueError(f"peer {self.id} already stores movie {movie.id}")
        if not self.has_room_for(movie):
            raise ValueError(f"peer {self.id} has no room for movie {movie.id}")
        self.stored.add(movie.id)
        self.used_bytes += movie.size_bytes

    def remove_movie(self, movie: Movie) -> None:
        self.stored.remove(movie.id)
        self.used_bytes -= movie.size_bytes

    def clear(self) -> Set[int]:
        lost = set(self.stored)
        self.stored.clear()
        self.used_bytes = 0
        return lost


@dataclass(frozen=True)
class ResourceInfo:
    """What a peer volunteers when it registers as a serving peer."""

    storage_bytes: int
    uplink_channels: int
    churn: ChurnProfile


@dataclass
class ProxyServer(_Store):
    bandwidth_channels: int
    buffer_bytes: int
    cached: Dict[int, Movie] = field(default_factory=dict)
    request_counts: Dict[int, int] = field(default_factory=dict)
    registry: Dict[int, ResourceInfo] = field(default_factory=dict)
    busy_channels: int = 0
    used_bytes: int = 0
    max_movies: Optional[int] = None

    @property
    def capacity_bytes(self) -> int:
        return self.buffer_bytes

    @property
    def free_channels(self) -> int:
        return self.bandwidth_channels - self.busy_channels

    def movie_ids(self) -> Set[int]:
        return set(self.cached)

    def count_request(self, movie_id: int) -> None:
        self.request_counts[movie_id] = self.request_counts.get(movie_id, 0) + 1


@dataclass
class Cluster:
    proxy: ProxyServer
    peers: List[Peer]
    catalog: List[Movie]

    def __post_init__(self):
        self._movies = {m.id: m for m in self.catalog}
        self._peers = {p.id: p for p in self.peers}

    @property
    def movies(self) -> Mapping[int, Movie]:
        return self._movies

    def movie(self, movie_id: int) -> Movie:
        return self._movies[movie_id]

    def peer(self, peer_id: int) -> Peer:
        try:
            return self._peers[peer_id]
        except KeyError:
            raise UnknownPeerError(peer_id) from None

    @property
    def serving_peers(self) -> List[Peer]:
        return [p for p in self.peers if p.role == SERVING]

    @property
    def total_channels_required(self) -> int:
        return sum(m.channels for m in self.catalog)

    def holders(self, movie_id: int, online_only: bool = True) -> List[Peer]:
        """Registered serving peers that store ``movie_id``."""
        out = []
        for pid in self.proxy.registry:
            p = self._peers[pid]
            if movie_id in p.stored and (p.online or not online_only):
                out.append(p)
        return out


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    failed: tuple[str, ...] = ()  # subset of ("storage", "channels")

    def __bool__(self):
        return self.valid


def valid_replication(plan, cluster: Cluster, peers: Optional[Iterable[Peer]] = None) -> ValidityVerdict:
    """Check a replication plan against aggregate storage and uplink channels.

    ``peers`` defaults to every serving peer of the cluster. Both bounds are
    inclusive.
    """
    peers = cluster.serving_peers if peers is None else list(peers)
    needed = sum(cluster.movie(mid).size_bytes * r for mid, r in plan.counts.items())
    failed = []
    if needed > sum(p.storage_bytes for p in peers):
        failed.append("storage")
    if sum(p.uplink_channels for p in peers) < cluster.total_channels_required:
        failed.append("channels")
    return ValidityVerdict(not failed, tuple(failed))


@dataclass(frozen=True)
class PlaceOutcome:
    stored: bool
    evicted: tuple[int, ...] = ()
    reason: str = ""  # "too_large" | "less_popular" when rejected


def lfu_place(store, movie: Movie, catalog: Mapping[int, Movie]) -> PlaceOutcome:
    """Insert ``movie`` into a proxy or peer store, evicting less popular movies.

    Victims are taken least popular first (ties: higher id first) and only
    while they are strictly less popular than the newcomer. If that cannot
    free enough room the store is left untouched and the movie is rejected.
    """
    held = store.movie_ids()
    if movie.id in held:
        raise ValueError(f"movie {movie.id} is already stored")
    if movie.size_bytes > store.capacity_bytes:
        return PlaceOutcome(False, reason="too_large")

    victims: List[Movie] = []
    free = store.free_bytes
    count = len(held)
    order = sorted((catalog[i] for i in held), key=lambda m: (m.popularity, -m.id))
    for cand in order:
        if free >= movie.size_bytes and (store.max_movies is None or count < store.max_movies):
            break
        if cand.popularity >= movie.popularity:
            return PlaceOutcome(False, reason="less_popular")
        victims.append(cand)
        free += cand.size_bytes
        count -= 1
    if free < movie.size_bytes or (store.max_movies is not None and count >= store.max_movies):
        return PlaceOutcome(False, reason="less_popular")

    for v in victims:
        _store_remove(store, v)
    _store_add(store, movie)
    return PlaceOutcome(True, evicted=tuple(v.id for v in victims))


def _store_add(store, movie: Movie) -> None:
    if isinstance(store, ProxyServer):
        store.cached[movie.id] = movie
        store.used_bytes += movie.size_bytes
    else:
        store.add_movie(movie)


def _store_remove(store, movie: Movie) -> None:
    if isinstance(store, ProxyServer):
        del store.cached[movie.id]
        store.used_bytes -= movie.size_bytes
    else:
        store.remove_movie(movie)


def register_serving_peer(cluster: Cluster, peer_id: int, resources: Optional[ResourceInfo] = None) -> Dict[int, ResourceInfo]:
    """Promote a peer to serving and record its resource snapshot (idempotent)."""
    peer = cluster.peer(peer_id)
    if peer_id in cluster.proxy.registry:
        return cluster.proxy.registry
    if resources is not None:
        peer.storage_bytes = resources.storage_bytes
        peer.uplink_channels = resources.uplink_channels
        peer.churn = resources.churn
    peer.role = SERVING
    cluster.proxy.registry[peer_id] = ResourceInfo(peer.storage_bytes, peer.uplink_channels, peer.churn)
    return cluster.proxy.registry
