import itertools

import pytest
from hypothesis import given, settings, strategies as st

from p2pvod.placement import (
    UndefinedWeightError,
    movie_weight,
    place,
    plan_weights,
    random_placement,
    round_robin_placement,
    smallest_load_first,
)
from p2pvod.replication import ReplicationPlan
from p2pvod.workload import RngStreams

from conftest import movie, peer


def test_weight_direct_substitution():
    assert movie_weight(0.5, 0.2, 5, 1) == pytest.approx(0.02, rel=1e-15)
    assert movie_weight(1, 1, 1, 1) == 1.0
    assert movie_weight(0.3, 0.3, 2) == 2 * movie_weight(0.3, 0.3, 4)


def test_weight_undefined_without_replicas():
    with pytest.raises(UndefinedWeightError):
        movie_weight(1.0, 0.5, 0)


def test_slf_three_identical_peers(expected):
    catalog = {1: movie(1, 0.6), 2: movie(2, 0.4)}
    peers = [peer(i) for i in range(3)]
    res = smallest_load_first(ReplicationPlan({1: 2, 2: 1}), {1: 2.0, 2: 1.0}, peers, catalog, per_round=3)
    held = {p.id: set() for p in peers}
    for mid, pid in res.pairs:
        held[pid].add(f"m{mid}")
    shape = sorted(sorted(h) for h in held.values())
    assert [shape] == expected["slf_three_peer_shapes"]
    assert res.pairs == [(1, 0), (1, 1), (2, 2)]
    assert not res.leftover


def test_slf_duplicate_ban_leaves_copy_unplaced():
    catalog = {1: movie(1)}
    peers = [peer(0, stored=[1], catalog=catalog)]
    res = smallest_load_first(ReplicationPlan({1: 1}), {1: 1.0}, peers, catalog)
    assert res.pairs == [] and res.leftover == {1: 1}


def test_slf_zero_capacity_peers():
    catalog = {1: movie(1), 2: movie(2)}
    peers = [peer(i, storage=0) for i in range(3)]
    res = smallest_load_first(ReplicationPlan({1: 2, 2: 1}), {1: 1.0, 2: 1.0}, peers, catalog)
    assert res.pairs == [] and res.leftover == {1: 2, 2: 1}


def test_placement_does_not_touch_input_peers():
    catalog = {1: movie(1)}
    peers = [peer(0), peer(1)]
    smallest_load_first(ReplicationPlan({1: 2}), {1: 1.0}, peers, catalog)
    assert all(not p.stored and p.used_bytes == 0 for p in peers)


def test_random_placement_single_eligible_peer_and_determinism():
    catalog = {1: movie(1)}
    peers = [peer(0, online=False), peer(1), peer(2, storage=0)]
    res = random_placement(ReplicationPlan({1: 1}), peers, RngStreams(1).get("p"), catalog)
    assert res.pairs == [(1, 1)]
    many = [peer(i) for i in range(6)]
    plan = ReplicationPlan({1: 3})
    a = random_placement(plan, many, RngStreams(9).get("p"), catalog)
    b = random_placement(plan, many, RngStreams(9).get("p"), catalog)
    assert a.pairs == b.pairs
    none = random_placement(plan, [peer(0, storage=0)], RngStreams(9).get("p"), catalog)
    assert none.leftover == {1: 3}


def test_round_robin_alternates_and_skips_full_peers():
    catalog = {i: movie(i) for i in range(1, 5)}
    peers = [peer(0), peer(1)]
    res = round_robin_placement(ReplicationPlan({i: 1 for i in catalog}), peers, catalog)
    assert [pid for _, pid in res.pairs] == [0, 1, 0, 1]
    small = [peer(0, storage=1), peer(1)]
    res = round_robin_placement(ReplicationPlan({i: 1 for i in catalog}), small, catalog)
    assert [pid for _, pid in res.pairs] == [0, 1, 1, 1]
    assert round_robin_placement(ReplicationPlan({}), peers, catalog).pairs == []


def test_place_dispatch_errors():
    with pytest.raises(ValueError, match="valid placements"):
        place("nosuch", ReplicationPlan({}), {}, [], {})
    with pytest.raises(ValueError):
        place("random", ReplicationPlan({}), {}, [], {})


placement_inputs = st.fixed_dictionaries({
    "counts": st.lists(st.integers(0, 4), min_size=1, max_size=6),
    "sizes": st.lists(st.integers(1, 4), min_size=6, max_size=6),
    "storage": st.lists(st.integers(0, 12), min_size=1, max_size=7),
    "preload": st.lists(st.integers(0, 3), min_size=7, max_size=7),
    "online": st.lists(st.booleans(), min_size=7, max_size=7),
    "cap": st.one_of(st.none(), st.integers(1, 4)),
    "per_round": st.one_of(st.none(), st.integers(1, 5)),
    "rates": st.lists(st.floats(0.01, 5), min_size=6, max_size=6),
})


def _build(d):
    catalog = {i + 1: movie(i + 1, 0.1 + 0.01 * i, size=d["sizes"][i], rate=d["rates"][i]) for i in range(6)}
    plan = ReplicationPlan({i + 1: c for i, c in enumerate(d["counts"])})
    peers = []
    for j, cap in enumerate(d["storage"]):
        p = peer(j, storage=cap, online=d["online"][j], max_movies=d["cap"])
        for mid in range(1, d["preload"][j] + 1):
            if p.has_room_for(catalog[mid]):
                p.add_movie(catalog[mid])
        peers.append(p)
    weights = plan_weights(plan, {m: x.arrival_rate for m, x in catalog.items()}, catalog)
    return catalog, plan, peers, weights


def _check_constraints(res, catalog, peers, plan):
    seen = set(res.pairs)
    assert len(seen) == len(res.pairs)  # no duplicate (movie, peer)
    by_id = {p.id: p for p in peers}
    extra = {p.id: 0 for p in peers}
    count = {p.id: len(p.stored) for p in peers}
    for mid, pid in res.pairs:
        assert mid not in by_id[pid].stored
        assert by_id[pid].online
        extra[pid] += catalog[mid].size_bytes
        count[pid] += 1
    for p in peers:
        assert p.used_bytes + extra[p.id] <= p.storage_bytes
        if p.max_movies is not None:
            assert count[p.id] <= p.max_movies
    placed = {}
    for mid, _ in res.pairs:
        placed[mid] = placed.get(mid, 0) + 1
    for mid, r in plan.counts.items():
        assert placed.get(mid, 0) + res.leftover.get(mid, 0) == r


@settings(max_examples=150, deadline=None)
@given(placement_inputs)
def test_slf_constraints_and_minimality_by_log_replay(d):
    catalog, plan, peers, weights = _build(d)
    res = smallest_load_first(plan, weights, peers, catalog, d["per_round"])
    _check_constraints(res, catalog, peers, plan)
    # replay: rebuild loads from scratch and check every choice was a minimum
    load = {p.id: p.used_bytes for p in peers}
    for (mid, pid, snapshot), pair in zip(res.log, res.pairs):
        assert pair == (mid, pid)
        assert snapshot == {k: load[k] for k in snapshot}
        assert pid in snapshot
        assert (load[pid], pid) == min((load[k], k) for k in snapshot)
        load[pid] += catalog[mid].size_bytes


@settings(max_examples=80, deadline=None)
@given(placement_inputs, st.sampled_from(["random", "round_robin"]))
def test_other_placements_respect_constraints(d, name):
    catalog, plan, peers, weights = _build(d)
    res = place(name, plan, weights, peers, catalog, stream=RngStreams(3).get("p"))
    _check_constraints(res, catalog, peers, plan)


@settings(max_examples=100, deadline=None)
@given(placement_inputs, st.floats(1e-3, 1e3))
def test_weight_order_invariant_under_positive_scale(d, scale):
    catalog, plan, peers, _ = _build(d)
    rates = {m: x.arrival_rate for m, x in catalog.items()}
    w1 = plan_weights(plan, rates, catalog, 1.0)
    w2 = plan_weights(plan, rates, catalog, scale)
    order = lambda w: sorted(w, key=lambda m: (-w[m], m))  # noqa: E731
    assert order(w1) == order(w2)
    a = smallest_load_first(plan, w1, peers, catalog, d["per_round"])
    b = smallest_load_first(plan, w2, peers, catalog, d["per_round"])
    assert a.pairs == b.pairs and a.leftover == b.leftover
