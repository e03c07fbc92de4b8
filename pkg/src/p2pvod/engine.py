"""Single-cluster discrete-event simulation.

One run wires the workload, the replication strategy, placement, serving-peer
selection, churn and repair together and produces a :class:`MetricsReport`.

Session routing:

* Every session starts on a proxy channel. A movie the proxy does not hold
  is pulled from the main server through the proxy and offered to the cache
  (LFU admission).
* After the first ``handoff_fraction`` of the movie the session moves to the
  least-loaded serving peer holding it, or stays on the proxy if there is none.
* A request arriving while the proxy is saturated goes straight to a peer, or
  is rejected when no peer can take it.
* After each replication batch, sessions the proxy streams past their prefix
  are chained onto peers that can now take them.
* When a serving peer goes down its sessions fail over, its replicas are lost
  and one repair per lost replica is scheduled. Losing the last live replica
  of a movie cancels that movie's pending repairs (the absorbing state).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .cluster import (
    NON_SERVING,
    ChurnProfile,
    Cluster,
    Peer,
    ProxyServer,
    ResourceInfo,
    lfu_place,
    register_serving_peer,
)
from .config import SimConfig
from .metrics import MetricsReport, merge
from .placement import place, plan_weights
from .replication import ReplicationPlan, RequestBatch, compute_plan
from .selection import FAILED, PROXY, failover, least_load_first, snapshots
from .workload import RngStreams, build_catalog, poisson_arrivals, sample_exponential

ARRIVAL = "arrival"
HANDOFF = "handoff"
SESSION_END = "session_end"
PEER_DOWN = "peer_down"
PEER_UP = "peer_up"
REPAIR = "repair"
BATCH = "batch"

ACTIVE, COMPLETED, FAILED_STATUS = "active", "completed", "failed"


class InvariantError(AssertionError):
    pass


@dataclass(order=True)
class Event:
    time_s: float
    seq: int
    kind: str = field(compare=False)
    data: Any = field(compare=False, default=None)


@dataclass
class Session:
    id: int
    movie_id: int
    requester: int
    source: Any  # serving peer id or PROXY
    start_s: float
    duration_s: float
    position_s: float = 0.0
    status: str = ACTIVE
    failover_count: int = 0
    in_prefix: bool = True
    used_peer: bool = False


@dataclass
class Lineage:
    """One replica slot, followed across repairs until it is lost for good."""

    id: int
    movie_id: int
    born_s: float
    n_at_birth: int = 0
    pending: bool = False  # lost and waiting for a repair


class Simulation:
    def __init__(self, cfg: SimConfig, seed: Optional[int] = None, check_invariants: bool = False):
        self.cfg = cfg
        self.seed = cfg.seeds[0] if seed is None else seed
        self.check = check_invariants
        self.rng = RngStreams(self.seed)
        self.now = 0.0
        self._queue: List[Event] = []
        self._seq = itertools.count()
        self._ids = itertools.count(1)

        self.catalog = build_catalog(
            cfg.movies, cfg.zipf_skew, cfg.aggregate_rate, cfg.movie_size_bytes,
            cfg.movie_duration_s, cfg.num_blocks,
        )
        self.movies = {m.id: m for m in self.catalog}
        self.cluster = self._build_cluster()
        self.proxy = self.cluster.proxy
        self.serving = self.cluster.serving_peers
        self.requesters = [p.id for p in self.cluster.peers if p.role == NON_SERVING]
        self.fail_rate = 1.0 / cfg.mean_up_s if cfg.mean_up_s > 0 else math.inf
        self.repair_rate = cfg.repair_gamma * self.fail_rate if cfg.mean_up_s > 0 else 0.0

        self.sessions: Dict[int, Session] = {}
        self.by_source: Dict[Any, set] = {}
        self.proxy_body: Dict[int, int] = {m: 0 for m in self.movies}
        self.live: Dict[tuple, Lineage] = {}  # (movie id, peer id) -> lineage
        self.pending: Dict[int, Lineage] = {}  # lineage id -> lineage awaiting repair
        self.holders = {m: 0 for m in self.movies}

        self.counts = {k: 0 for k in (
            "requests", "admitted", "rejected", "immediate", "chained", "completed", "failed",
            "failovers", "handoffs", "repairs", "repairs_failed", "absorptions",
            "copies_placed", "copies_leftover", "offloads",
        )}
        self.window_requests = {m: 0 for m in self.movies}
        self.replicas_placed = {m: 0 for m in self.movies}
        self.lifetime_by_n: Dict[int, List[float]] = {}
        self.lifetime_by_movie = {m: [0.0, 0] for m in self.movies}

        w = cfg.batch_interval_s
        self.n_windows = max(1, math.ceil(cfg.sim_duration_s / w - 1e-9))
        self.busy_area = [0.0] * self.n_windows  # channel-seconds
        self.copy_area = [0.0] * self.n_windows
        self.buffer_area = [0.0] * self.n_windows  # byte-seconds
        self._last_t = 0.0
        self._buffer_occ = 0
        self.log: List[tuple] = []

    # ----- setup -----------------------------------------------------------

    def _build_cluster(self) -> Cluster:
        cfg = self.cfg
        churn = ChurnProfile(cfg.mean_up_s, cfg.mean_dn_s)
        g = cfg.serving_peers
        peers = []
        for pid in range(cfg.peers):
            peers.append(Peer(
                id=pid,
                role=NON_SERVING,
                storage_bytes=0,
                uplink_channels=cfg.base_uplink_channels,
                churn=churn,
                max_movies=cfg.max_movies_per_peer,
            ))
        proxy = ProxyServer(cfg.proxy_channels, cfg.proxy_buffer_bytes)
        cluster = Cluster(proxy, peers, self.catalog)
        storage = cfg.max_movies_per_peer * cfg.movie_size_bytes
        for pid in range(g):
            res = ResourceInfo(storage, cfg.base_uplink_channels * cfg.uplink_ratio, churn)
            register_serving_peer(cluster, pid, res)
        return cluster

    def _schedule(self, t: float, kind: str, data=None) -> None:
        heapq.heappush(self._queue, Event(t, next(self._seq), kind, data))

    def _init_events(self) -> None:
        cfg = self.cfg
        rates = [m.arrival_rate for m in self.catalog]
        for t, i in poisson_arrivals(rates, cfg.sim_duration_s, self.rng.get("arrivals")):
            self._schedule(t, ARRIVAL, self.catalog[i].id)
        churn = self.rng.get("churn")
        a_up = cfg.availability
        for p in self.serving:
            if cfg.mean_up_s == 0:
                p.online = False
                continue
            if cfg.mean_dn_s == 0:
                p.online = True
                continue
            p.online = bool(churn.random() < a_up)
            if p.online:
                self._schedule(sample_exponential(churn, cfg.mean_up_s), PEER_DOWN, p.id)
            else:
                self._schedule(sample_exponential(churn, cfg.mean_dn_s), PEER_UP, p.id)
        if cfg.batch_interval_s <= cfg.sim_duration_s:
            self._schedule(cfg.batch_interval_s, BATCH)

    # ----- accounting ------------------------------------------------------

    def _advance(self, t: float) -> None:
        """Integrate proxy channel and buffer occupancy from the last event to ``t``."""
        w = self.cfg.batch_interval_s
        t0 = self._last_t
        busy = self.proxy.busy_channels
        while t0 < t:
            i = min(int(t0 // w), self.n_windows - 1)
            t1 = min(t, (i + 1) * w) if i < self.n_windows - 1 else t
            if t1 <= t0:  # floating guard at a boundary
                t1 = t
            self.busy_area[i] += busy * (t1 - t0)
            self.buffer_area[i] += self._buffer_occ * (t1 - t0)
            t0 = t1
        self._last_t = t

    def _window(self) -> int:
        return min(int(self.now // self.cfg.batch_interval_s), self.n_windows - 1)

    def _refresh_buffer(self) -> None:
        """Bytes pinned in the proxy buffer.

        A cached movie pins its whole size while no online peer holds it or
        the proxy streams its body to someone; otherwise only the prefix the
        proxy serves before handoff.
        """
        occ = 0
        h = self.cfg.handoff_fraction
        for mid, movie in self.proxy.cached.items():
            if self.holders[mid] == 0 or self.proxy_body[mid] > 0:
                occ += movie.size_bytes
            else:
                occ += int(math.ceil(h * movie.size_bytes))
        self._buffer_occ = occ

    # ----- source bookkeeping ----------------------------------------------

    def _attach(self, s: Session, source) -> None:
        s.source = source
        self.by_source.setdefault(source, set()).add(s.id)
        if source == PROXY:
            self.proxy.busy_channels += 1
            if not s.in_prefix:
                self.proxy_body[s.movie_id] += 1
        else:
            self.cluster.peer(source).active_streams += 1
            s.used_peer = True

    def _detach(self, s: Session) -> None:
        src = s.source
        if src is None:
            return
        self.by_source[src].discard(s.id)
        if src == PROXY:
            self.proxy.busy_channels -= 1
            if not s.in_prefix:
                self.proxy_body[s.movie_id] -= 1
        else:
            self.cluster.peer(src).active_streams -= 1
        s.source = None

    def _finish(self, s: Session, status: str) -> None:
        s.position_s = min(self.now - s.start_s, s.duration_s)
        if status == COMPLETED:
            s.position_s = s.duration_s
        self._detach(s)
        s.status = status
        del self.sessions[s.id]
        self.counts["completed" if status == COMPLETED else "failed"] += 1
        if s.used_peer:
            self.counts["chained"] += 1
        else:
            self.counts["immediate"] += 1

    # ----- event handlers --------------------------------------------------

    def handle_request(self, movie_id: int) -> Optional[Session]:
        cfg = self.cfg
        movie = self.movies[movie_id]
        self.counts["requests"] += 1
        self.proxy.count_request(movie_id)
        self.window_requests[movie_id] += 1
        requester = -1
        if self.requesters:
            requester = self.requesters[int(self.rng.get("requesters").integers(len(self.requesters)))]

        s = Session(next(self._ids), movie_id, requester, None, self.now, movie.duration_s)
        if movie_id not in self.proxy.cached:
            # fetched from the main server and buffered in the proxy on the way through
            lfu_place(self.proxy, movie, self.movies)
        if self.proxy.free_channels >= 1:
            first = PROXY
        else:
            choice = least_load_first(snapshots(self.cluster, movie_id))
            if choice == PROXY:
                self.counts["rejected"] += 1
                return None
            first = choice
            s.in_prefix = False
        self.counts["admitted"] += 1
        self.sessions[s.id] = s
        self._attach(s, first)
        if s.in_prefix:
            self._schedule(self.now + cfg.handoff_fraction * movie.duration_s, HANDOFF, s.id)
        self._schedule(self.now + movie.duration_s, SESSION_END, s.id)
        return s

    def handle_handoff(self, sid: int) -> None:
        s = self.sessions.get(sid)
        if s is None:
            return
        self.counts["handoffs"] += 1
        s.position_s = self.now - s.start_s
        choice = least_load_first(snapshots(self.cluster, s.movie_id))
        prev = s.source  # always the proxy: only prefix sessions get a handoff
        if choice != PROXY:
            self._detach(s)
            s.in_prefix = False
            self._attach(s, choice)
        else:
            self._detach(s)
            s.in_prefix = False
            self._attach(s, prev)

    def complete_session(self, sid: int) -> None:
        s = self.sessions.get(sid)
        if s is None:
            return
        src = s.source
        self._finish(s, COMPLETED)
        if src != PROXY:
            self._offload_proxy(self.cluster.peer(src).stored)

    def handle_peer_down(self, pid: int) -> None:
        cfg = self.cfg
        peer = self.cluster.peer(pid)
        peer.online = False
        if cfg.mean_dn_s > 0:
            self._schedule(self.now + sample_exponential(self.rng.get("churn"), cfg.mean_dn_s), PEER_UP, pid)

        for sid in sorted(self.by_source.get(pid, ())):
            s = self.sessions[sid]
            s.position_s = self.now - s.start_s
            s.failover_count += 1
            self.counts["failovers"] += 1
            self._detach(s)
            target = failover(s, self.cluster, pid)
            if target == FAILED:
                self._finish(s, FAILED_STATUS)
            else:
                self._attach(s, target)

        repair = self.rng.get("repair")
        for mid in sorted(peer.clear()):
            lin = self.live.pop((mid, pid))
            self.holders[mid] -= 1
            if self.holders[mid] == 0:
                self._absorb(mid, lin)
            elif self.repair_rate > 0:
                lin.pending = True
                self.pending[lin.id] = lin
                self._schedule(self.now + sample_exponential(repair, 1.0 / self.repair_rate), REPAIR, lin.id)
            else:
                self._end_lineage(lin)

    def _absorb(self, mid: int, lin: Lineage) -> None:
        self.counts["absorptions"] += 1
        self._end_lineage(lin)
        for lid in [i for i, other in self.pending.items() if other.movie_id == mid]:
            self._end_lineage(self.pending.pop(lid))

    def _end_lineage(self, lin: Lineage) -> None:
        lin.pending = False
        life = self.now - lin.born_s
        acc = self.lifetime_by_n.setdefault(lin.n_at_birth, [0.0, 0])
        acc[0] += life
        acc[1] += 1
        per = self.lifetime_by_movie[lin.movie_id]
        per[0] += life
        per[1] += 1

    def handle_peer_up(self, pid: int) -> None:
        peer = self.cluster.peer(pid)
        peer.online = True
        if self.cfg.mean_up_s > 0:
            self._schedule(self.now + sample_exponential(self.rng.get("churn"), self.cfg.mean_up_s), PEER_DOWN, pid)

    def handle_repair(self, lin_id: int) -> None:
        lin = self.pending.pop(lin_id, None)
        if lin is None:
            return  # cancelled when the movie lost its last replica
        movie = self.movies[lin.movie_id]
        eligible = [p for p in self.serving if p.online and movie.id not in p.stored and p.has_room_for(movie)]
        if not eligible:
            self.counts["repairs_failed"] += 1
            self._end_lineage(lin)
            return
        target = min(eligible, key=lambda p: (p.used_bytes, p.id))
        self.log.append(("repair", movie.id, target.id, {p.id: p.used_bytes for p in eligible}))
        target.add_movie(movie)
        self.live[(movie.id, target.id)] = lin
        lin.pending = False
        self.holders[movie.id] += 1
        self.counts["repairs"] += 1
        self._offload_proxy({movie.id})

    def handle_replication_batch(self):
        cfg = self.cfg
        window = cfg.batch_interval_s
        counts = dict(self.window_requests)
        self.window_requests = {m: 0 for m in self.movies}
        nxt = self.now + window
        if nxt <= cfg.sim_duration_s:
            self._schedule(nxt, BATCH)
        if not any(counts.values()):
            return None, None
        batch = RequestBatch(tuple((m, c / window) for m, c in sorted(counts.items())), window)
        target = compute_plan(cfg.strategy, batch, self.movies, self.serving, stream=self.rng.get("strategy"))
        # the strategy sets how many live replicas each movie should have; copy only the shortfall
        plan = ReplicationPlan({m: max(0, r - self.holders[m]) for m, r in target.counts.items()})
        weights = plan_weights(plan, dict(batch.entries), self.movies, cfg.weight_scale)
        result = place(cfg.placement, plan, weights, self.serving, self.movies,
                       stream=self.rng.get("placement"), per_round=cfg.placement_round or None)
        born = []
        for mid, pid in result.pairs:
            born.append(self.add_replica(mid, pid))
            # the proxy pushes each copy faster than a paced stream
            self.copy_area[self._window()] += self.movies[mid].duration_s / cfg.copy_rate_factor
        for lin in born:
            lin.n_at_birth = self.holders[lin.movie_id]
        self.counts["copies_placed"] += len(result.pairs)
        self.counts["copies_leftover"] += sum(result.leftover.values())
        self.log.append(("batch", plan, result))
        self._offload_proxy()
        return plan, result

    def add_replica(self, mid: int, pid: int) -> Lineage:
        """Store a fresh copy of ``mid`` on serving peer ``pid`` and start its lineage."""
        self.cluster.peer(pid).add_movie(self.movies[mid])
        lin = Lineage(next(self._ids), mid, self.now)
        self.live[(mid, pid)] = lin
        self.holders[mid] += 1
        self.replicas_placed[mid] += 1
        lin.n_at_birth = self.holders[mid]
        return lin

    def _offload_proxy(self, movie_ids=None) -> None:
        """Chain proxy-held sessions past their prefix onto peers that can take them."""
        for sid in sorted(self.by_source.get(PROXY, ())):
            s = self.sessions[sid]
            if s.in_prefix or (movie_ids is not None and s.movie_id not in movie_ids):
                continue
            choice = least_load_first(snapshots(self.cluster, s.movie_id))
            if choice == PROXY:
                continue
            s.position_s = self.now - s.start_s
            self._detach(s)
            self._attach(s, choice)
            self.counts["offloads"] += 1

    # ----- main loop -------------------------------------------------------

    def run(self) -> MetricsReport:
        self._init_events()
        self._refresh_buffer()
        handlers = {
            ARRIVAL: self.handle_request,
            HANDOFF: self.handle_handoff,
            SESSION_END: self.complete_session,
            PEER_DOWN: self.handle_peer_down,
            PEER_UP: self.handle_peer_up,
            REPAIR: self.handle_repair,
            BATCH: lambda _: self.handle_replication_batch(),
        }
        horizon = self.cfg.sim_duration_s
        while self._queue and self._queue[0].time_s <= horizon:
            ev = heapq.heappop(self._queue)
            if ev.time_s < self.now:
                raise InvariantError(f"event at {ev.time_s} popped after clock {self.now}")
            self._advance(ev.time_s)
            self.now = ev.time_s
            handlers[ev.kind](ev.data)
            self._refresh_buffer()
            if self.check:
                self.check_invariants()
        self._advance(horizon)
        self.now = horizon
        return self.report()

    def check_invariants(self) -> None:
        proxy_streams = 0
        streams = {p.id: 0 for p in self.cluster.peers}
        for s in self.sessions.values():
            if s.source == PROXY:
                proxy_streams += 1
            else:
                streams[s.source] += 1
                if not self.cluster.peer(s.source).online:
                    raise InvariantError(f"session {s.id} sourced by offline peer {s.source}")
            if s.position_s > s.duration_s:
                raise InvariantError(f"session {s.id} played past the end")
        if proxy_streams != self.proxy.busy_channels or proxy_streams > self.proxy.bandwidth_channels:
            raise InvariantError("proxy channel accounting broken")
        for p in self.cluster.peers:
            if streams[p.id] != p.active_streams or p.active_streams > p.uplink_channels:
                raise InvariantError(f"peer {p.id} channel accounting broken")
            if p.used_bytes > p.storage_bytes or len(p.stored) > (p.max_movies or len(p.stored)):
                raise InvariantError(f"peer {p.id} over capacity")
            if p.role == NON_SERVING and p.stored:
                raise InvariantError(f"non-serving peer {p.id} stores movies")
            if not p.online and p.stored:
                raise InvariantError(f"offline peer {p.id} still holds replicas")
        if self.proxy.used_bytes > self.proxy.buffer_bytes:
            raise InvariantError("proxy buffer over capacity")
        c = self.counts
        if c["completed"] + c["failed"] + len(self.sessions) != c["admitted"]:
            raise InvariantError("session conservation broken")
        for mid in self.movies:
            n = sum(1 for p in self.serving if mid in p.stored)
            if n != self.holders[mid]:
                raise InvariantError(f"holder count for movie {mid} out of sync")

    def report(self) -> MetricsReport:
        cfg = self.cfg
        w = cfg.batch_interval_s
        starts, bw, buf = [], [], []
        for i in range(self.n_windows):
            t0 = i * w
            span = min(cfg.sim_duration_s, t0 + w) - t0 if i < self.n_windows - 1 else cfg.sim_duration_s - t0
            starts.append(t0)
            if cfg.proxy_channels > 0 and span > 0:
                bw.append(min(1.0, (self.busy_area[i] + self.copy_area[i]) / (cfg.proxy_channels * span)))
            else:
                bw.append(0.0)
            if cfg.proxy_buffer_bytes > 0 and span > 0:
                buf.append(min(1.0, self.buffer_area[i] / (cfg.proxy_buffer_bytes * span)))
            else:
                buf.append(0.0)
        done = self.counts["completed"] + self.counts["failed"]
        counts = dict(self.counts)
        counts["active_at_end"] = len(self.sessions)
        counts["immediate"] += sum(1 for s in self.sessions.values() if not s.used_peer)
        counts["chained"] += sum(1 for s in self.sessions.values() if s.used_peer)
        echo = cfg.echo()
        echo["seeds"] = str(self.seed)
        return MetricsReport(
            config=echo,
            config_hash=cfg.hash(),
            seeds=[self.seed],
            runs=1,
            replicas_per_movie=[float(self.replicas_placed[m.id]) for m in self.catalog],
            success_playback_prob=self.counts["completed"] / done if done else None,
            prob_runs=1 if done else 0,
            counts=counts,
            window_starts=starts,
            bandwidth_util=bw,
            buffer_util=buf,
            lifetime_by_n={n: (v[0], v[1]) for n, v in sorted(self.lifetime_by_n.items())},
            lifetime_by_movie=[tuple(self.lifetime_by_movie[m.id]) for m in self.catalog],
            request_counts=[self.proxy.request_counts.get(m.id, 0) for m in self.catalog],
        )


def run(cfg: SimConfig, seed: Optional[int] = None, check_invariants: bool = False) -> MetricsReport:
    """Simulate one cluster for one seed."""
    return Simulation(cfg, seed, check_invariants).run()


def run_seeds(cfg: SimConfig, jobs: int = 1) -> MetricsReport:
    """One run per configured seed, merged. ``jobs > 1`` runs seeds in worker processes."""
    seeds = list(cfg.seeds)
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            reports = list(pool.map(run, [cfg] * len(seeds), seeds))
    else:
        reports = [run(cfg, s) for s in seeds]
    return merge(reports)
