import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2pvod.cluster import valid_replication
from p2pvod.replication import (
    RequestBatch,
    ReplicationPlan,
    compute_plan,
    maxhit_replicas,
    minreq_replicas,
    proposed_replicas,
    random_replicas,
    shrink_to_storage,
)
from p2pvod.workload import RngStreams, zipf_popularity

from conftest import cluster, movie, peer


def _setup(pops, n_peers=10, storage=100, online=True, channels=2):
    catalog = {i + 1: movie(i + 1, q) for i, q in enumerate(pops)}
    peers = [peer(i, storage=storage, online=online, channels=channels) for i in range(n_peers)]
    return catalog, peers


def test_proposed_matches_independent_evaluation(expected):
    # rates 1.0 and 0.6 normalize to A_hat = 1.0 and 0.6
    catalog, peers = _setup([0.5, 0.4])
    batch = RequestBatch(((1, 1.0), (2, 0.6)), 600)
    plan = proposed_replicas(batch, catalog, peers)
    assert plan.counts[2] == expected["proposed_ahat06_q04_tr10"]
    assert plan.counts[1] == 8  # omega = 0.75


def test_empty_batch_gives_empty_plan():
    catalog, peers = _setup([0.5, 0.5])
    plan = proposed_replicas(RequestBatch((), 600), catalog, peers)
    assert plan.counts == {} and plan.total == 0


def test_no_candidate_peers_means_no_copies():
    catalog, peers = _setup([0.6, 0.4], online=False)
    plan = proposed_replicas(RequestBatch(((1, 1.0), (2, 1.0)), 600), catalog, peers)
    assert plan.total == 0


def test_two_movies_equal_demand_monotone_with_floor():
    catalog, peers = _setup([0.6, 0.4], n_peers=4)
    plan = proposed_replicas(RequestBatch(((1, 1.0), (2, 1.0)), 600), catalog, peers)
    assert plan.counts[1] >= plan.counts[2] >= 1


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.floats(0, 1.5), st.integers(1, 25))
def test_proposed_equal_demand_is_rank_monotone_and_floored(m, s, n_peers):
    catalog, peers = _setup(zipf_popularity(m, s).tolist(), n_peers=n_peers, storage=10**6)
    plan = proposed_replicas(RequestBatch(tuple((i, 0.1) for i in catalog), 600), catalog, peers)
    counts = [plan.counts[i] for i in sorted(catalog)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert min(counts) >= 1
    assert max(counts) <= n_peers


def test_random_budget_edge_cases():
    catalog, peers = _setup([1.0])
    rng = RngStreams(1).get("strategy")
    batch = RequestBatch(((1, 0.2),), 600)
    assert random_replicas(batch, catalog, peers, 0, rng).total == 0
    assert random_replicas(batch, catalog, peers, 7, rng).counts == {1: 7}
    with pytest.raises(ValueError):
        random_replicas(batch, catalog, peers, -1, rng)


def test_random_is_reproducible():
    catalog, peers = _setup([0.3, 0.3, 0.4])
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    a = random_replicas(batch, catalog, peers, 9, RngStreams(4).get("strategy"))
    b = random_replicas(batch, catalog, peers, 9, RngStreams(4).get("strategy"))
    assert a == b and a.total == 9


def test_maxhit_spreads_evenly():
    catalog, peers = _setup([0.3, 0.25, 0.2, 0.15, 0.1])
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    assert set(maxhit_replicas(batch, catalog, peers, 10).counts.values()) == {2}
    eleven = maxhit_replicas(batch, catalog, peers, 11).counts
    assert eleven[1] == 3 and all(eleven[i] == 2 for i in (2, 3, 4, 5))
    assert maxhit_replicas(batch, catalog, peers, 0).total == 0


def test_minreq_largest_remainder(expected):
    catalog, peers = _setup([0.5, 0.3, 0.2])
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    plan = minreq_replicas(batch, catalog, peers, 10)
    assert [plan.counts[i] for i in (1, 2, 3)] == expected["minreq_q532_budget10"]
    plan = minreq_replicas(batch, catalog, peers, 1)
    assert [plan.counts[i] for i in (1, 2, 3)] == expected["minreq_q532_budget1"]


def test_minreq_uniform_popularity():
    catalog, peers = _setup([0.25] * 4)
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    assert set(minreq_replicas(batch, catalog, peers, 4).counts.values()) == {1}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.floats(0, 1.5), st.integers(0, 60))
def test_minreq_sums_to_budget_and_is_monotone(m, s, budget):
    catalog, peers = _setup(zipf_popularity(m, s).tolist(), storage=10**6)
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    plan = minreq_replicas(batch, catalog, peers, budget)
    counts = [plan.counts.get(i, 0) for i in sorted(catalog)]
    assert sum(counts) == budget
    assert all(a >= b for a, b in zip(counts, counts[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(0, 60))
def test_maxhit_spread_at_most_one(m, budget):
    catalog, peers = _setup(zipf_popularity(m, 0.271).tolist(), storage=10**6)
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    counts = [maxhit_replicas(batch, catalog, peers, budget).counts.get(i, 0) for i in catalog]
    assert max(counts) - min(counts) <= 1


@pytest.mark.parametrize("name", ["proposed", "random", "minreq", "maxhit"])
def test_every_strategy_returns_a_valid_plan(name):
    catalog, peers = _setup(zipf_popularity(8, 0.271).tolist(), n_peers=3, storage=5, channels=3)
    c = cluster(peers, catalog.values())
    batch = RequestBatch(tuple((i, 0.1 * i) for i in catalog), 600)
    plan = compute_plan(name, batch, catalog, peers, stream=RngStreams(1).get("strategy"), budget=40)
    assert valid_replication(plan, c)


def test_baselines_default_to_the_proposed_total():
    catalog, peers = _setup(zipf_popularity(6, 0.271).tolist())
    batch = RequestBatch(tuple((i, 0.1) for i in catalog), 600)
    total = compute_plan("proposed", batch, catalog, peers).total
    for name in ("random", "minreq", "maxhit"):
        assert compute_plan(name, batch, catalog, peers, stream=RngStreams(1).get("s")).total == total


def test_unknown_strategy_names_the_valid_ones():
    with pytest.raises(ValueError, match="proposed, random, minreq, maxhit"):
        compute_plan("nosuch", RequestBatch((), 1), {}, [])


def test_shrink_trims_least_popular_extras_before_floors():
    catalog = {1: movie(1, 0.6), 2: movie(2, 0.4)}
    assert shrink_to_storage({1: 3, 2: 3}, catalog, 4) == {1: 2, 2: 2}
    assert shrink_to_storage({1: 3, 2: 3}, catalog, 2) == {1: 1, 2: 1}
    assert shrink_to_storage({1: 3, 2: 3}, catalog, 1) == {1: 1, 2: 0}


def test_request_batch_validation():
    with pytest.raises(ValueError):
        RequestBatch(((1, 0.1), (1, 0.2)), 1)
    with pytest.raises(ValueError):
        RequestBatch(((1, -0.1),), 1)
    with pytest.raises(ValueError):
        ReplicationPlan({1: -1})
    assert RequestBatch.from_counts({2: 3, 1: 0}, 10).entries == ((2, 0.3),)
