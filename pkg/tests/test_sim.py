import math

import pytest
from hypothesis import given, settings, strategies as st

from throttlesim.sim import CallGraph, Cluster, ConfigError, RequestRecord, ServiceSpec, SimConfig


def one_service(quota, qmin=0.05, qmax=8.0, demand=50.0):
    spec = ServiceSpec("s", {"r": demand}, qmin, qmax)
    c = Cluster(SimConfig(), [spec], CallGraph({"r": [["s"]]}))
    c.set_quota("s", quota)
    return c


def req(i=0, rtype="r"):
    return RequestRecord(i, rtype, 0.0)


def test_request_within_budget_completes_same_period():
    c = one_service(1.0, demand=50.0)
    r = req()
    rep = c.step_period([r])
    assert rep.completed == [r]
    assert r.latency_ms == pytest.approx(50.0 / 8.0)
    assert c.read_stats("s") == (0, pytest.approx(50.0))


def test_partial_service_and_throttle_counting():
    c = one_service(0.5, demand=120.0)
    r = req()
    t1 = c.step_period([r])
    t2 = c.step_period([])
    assert t1.throttled == [True] and t2.throttled == [True]
    assert c.read_stats("s") == (2, pytest.approx(100.0))
    t3 = c.step_period([])
    assert t3.throttled == [False]
    assert t3.completed == [r]
    assert 200.0 < r.completion_time_ms < 300.0
    assert c.read_stats("s") == (2, pytest.approx(120.0))


def test_idle_cluster():
    c = one_service(1.0)
    rep = c.step_period([])
    assert rep.usage_ms == [0.0] and rep.throttled == [False]
    assert c.read_stats("s") == (0, 0.0)
    assert c.read_stats("s") == c.read_stats("s")


def test_set_quota_clamps_and_rejects():
    c = one_service(2.5)
    assert c.get_quota("s") == 2.5
    c.set_quota("s", 1000)
    assert c.get_quota("s") == 8.0
    c.set_quota("s", 0.01)
    assert c.get_quota("s") == 0.05
    for bad in (float("nan"), float("inf"), -1.0):
        with pytest.raises(ValueError):
            c.set_quota("s", bad)
    with pytest.raises(KeyError):
        c.set_quota("nope", 1.0)


def test_unknown_request_type_rejected():
    c = one_service(1.0)
    with pytest.raises(ConfigError):
        c.step_period([RequestRecord(0, "zzz", 0.0)])


def test_graph_validation():
    spec = ServiceSpec("a", {"r": 1.0})
    with pytest.raises(ConfigError):
        Cluster(SimConfig(), [spec], CallGraph({"r": [["a"], ["b"]]}))
    with pytest.raises(ConfigError):
        Cluster(SimConfig(), [spec, spec], CallGraph({"r": [["a"]]}))
    with pytest.raises(ConfigError):
        CallGraph({"r": []})
    with pytest.raises(ConfigError):
        SimConfig(period_ms=0)
    with pytest.raises(ConfigError):
        ServiceSpec("x", {"r": -1.0})


def test_parallel_stage_waits_for_slowest_branch_and_hop_delay():
    specs = [ServiceSpec("a", {"r": 8.0}), ServiceSpec("b", {"r": 16.0}), ServiceSpec("c", {"r": 8.0})]
    c = Cluster(SimConfig(hop_delay_ms=1.0), specs, CallGraph({"r": [["a", "b"], ["c"]]}))
    r = req()
    c.step_period([r])
    # stage 1 ends when b finishes (16/8 = 2 ms), then 1 ms hop, then 1 ms at c
    assert r.completion_time_ms == pytest.approx(4.0)


def test_latency_lower_bound():
    specs = [ServiceSpec("a", {"r": 4.0}, 0.05, 2.0), ServiceSpec("b", {"r": 10.0}, 0.05, 4.0)]
    c = Cluster(SimConfig(), specs, CallGraph({"r": [["a"], ["b"]]}))
    rs = [req(i) for i in range(5)]
    c.step_period(rs)
    bound = 4.0 / 2.0 + 10.0 / 4.0 + 1.0
    for r in rs:
        assert r.latency_ms >= bound - 1e-9


# -- conservation and throttle-definition properties ---------------------------------

def _chain(quotas, demands):
    specs = [ServiceSpec(f"s{k}", {"r": d}, 0.05, 8.0) for k, d in enumerate(demands)]
    c = Cluster(SimConfig(), specs, CallGraph({"r": [[s.id] for s in specs]}))
    for s, q in zip(specs, quotas):
        c.set_quota(s.id, q)
    return c


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=1, max_size=3),
       st.lists(st.integers(0, 6), min_size=1, max_size=12),
       st.floats(1.0, 60.0))
def test_single_service_conservation(quotas, arrivals_per_period, demand):
    # one service: everything pending is available from the period start
    c = _chain(quotas[:1], [demand])
    s = c.services[0]
    nid = 0
    for n in arrivals_per_period + [0] * 10:
        pending_before = s.pending_work_ms + n * demand
        budget = s.quota_cores * 100.0
        thr_before = s.nr_throttled
        batch = [RequestRecord(nid + k, "r", 0.0) for k in range(n)]
        nid += n
        rep = c.step_period(batch)
        served = rep.usage_ms[0]
        assert served == pytest.approx(min(pending_before, budget), abs=1e-6)
        assert served <= budget + 1e-9
        remaining = s.pending_work_ms
        assert remaining == pytest.approx(pending_before - served, abs=1e-6)
        hit = s.nr_throttled - thr_before
        assert hit in (0, 1)
        assert bool(hit) == (served >= budget - 1e-9 and remaining > 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=3, max_size=3),
       st.lists(st.integers(0, 5), min_size=1, max_size=10))
def test_chain_counters_consistent(quotas, arrivals_per_period):
    c = _chain(quotas, [5.0, 12.0, 30.0])
    nid = 0
    last = [(0, 0.0)] * 3
    for n in arrivals_per_period + [0] * 20:
        batch = [RequestRecord(nid + k, "r", 0.0) for k in range(n)]
        nid += n
        rep = c.step_period(batch)
        for k, s in enumerate(c.services):
            thr, use = c.read_stats(s.spec.id)
            assert thr - last[k][0] in (0, 1)
            assert use - last[k][1] == pytest.approx(rep.usage_ms[k])
            assert rep.usage_ms[k] <= s.quota_cores * 100.0 + 1e-9
            if rep.throttled[k]:
                assert rep.usage_ms[k] == pytest.approx(s.quota_cores * 100.0)
                assert s.pending
            last[k] = (thr, use)
        for r in rep.completed:
            assert r.completion_time_ms >= r.arrival_time_ms


def test_work_is_eventually_all_served():
    c = _chain([0.3, 0.3, 0.3], [5.0, 12.0, 30.0])
    rs = [RequestRecord(k, "r", 0.0) for k in range(20)]
    done = list(c.step_period(rs).completed)
    for _ in range(200):
        done += c.step_period([]).completed
    assert sorted(r.id for r in done) == list(range(20))
    assert [c.read_stats(f"s{k}")[1] for k in range(3)] == pytest.approx([100.0, 240.0, 600.0])
    assert c.in_flight() == 0
    assert not math.isnan(sum(r.latency_ms for r in done))
