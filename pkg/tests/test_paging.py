from __future__ import annotations

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from pgpp.errors import SimulationError, UnknownTrackingAreaError
from pgpp.mobility import AttachmentTimeline, attach_all, synth_traces
from pgpp.paging import (
    UNBOUNDED,
    PageRecord,
    SimReport,
    Tal,
    TrafficConfig,
    analyze_paging_log,
    capacity_estimate,
    hourly_page_budget,
    make_tal,
    paging_log_from_report,
    run_sim,
)
from pgpp.topology import TrackingAreaMap


def ring_map(n: int) -> TrackingAreaMap:
    return TrackingAreaMap(
        {t: frozenset({t}) for t in range(n)},
        {t: frozenset({(t - 1) % n, (t + 1) % n}) for t in range(n)},
    )


def growth_distribution(anchor, length, adjacency) -> dict[frozenset, Fraction]:
    """Exact distribution of the member set produced by uniform frontier growth."""
    out: Counter = Counter()

    def walk(chosen: frozenset, frontier: frozenset, p: Fraction, left: int):
        if left == 0 or not frontier:
            out[chosen] += p
            return
        for pick in frontier:
            walk(chosen | {pick}, (frontier - {pick}) | (adjacency[pick] - chosen - {pick}),
                 p / len(frontier), left - 1)

    walk(frozenset({anchor}), frozenset(adjacency[anchor]), Fraction(1), length - 1)
    return dict(out)


def test_tal_length_one_is_anchor_only():
    assert make_tal(2, 1, ring_map(5), np.random.default_rng(0)).ta_ids == (2,)


def test_isolated_anchor_stops_early():
    m = TrackingAreaMap({0: frozenset({0}), 1: frozenset({1})}, {})
    assert make_tal(0, 16, m, np.random.default_rng(0)).ta_ids == (0,)


def test_unknown_anchor_and_bad_length():
    with pytest.raises(UnknownTrackingAreaError):
        make_tal(99, 3, ring_map(5), np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_tal(0, 17, ring_map(5), np.random.default_rng(0))
    with pytest.raises(ValueError):
        Tal((1, 2), anchor=3)


def test_ring_growth_matches_exact_enumeration():
    m = ring_map(5)
    exact = growth_distribution(0, 3, m.adjacency)
    assert sum(exact.values()) == 1
    rng = np.random.default_rng(123)
    n = 10_000
    counts = Counter(frozenset(make_tal(0, 3, m, rng).ta_ids) for _ in range(n))
    assert set(counts) == set(exact)
    for s, p in exact.items():
        p = float(p)
        sigma = (n * p * (1 - p)) ** 0.5
        assert abs(counts[s] - n * p) <= 3 * sigma, (s, counts[s], n * p)


def test_tal_members_are_connected_through_chosen(topo500):
    rng = np.random.default_rng(1)
    adj = topo500.ta_map.adjacency
    for anchor in topo500.ta_map.ta_ids:
        tal = make_tal(anchor, 16, topo500.ta_map, rng)
        assert tal.ta_ids[0] == anchor and len(tal) <= 16
        for k, t in enumerate(tal.ta_ids[1:], start=1):
            assert adj[t] & set(tal.ta_ids[:k])


def test_anchor_policy_only_uses_anchor_neighbors(topo500):
    rng = np.random.default_rng(2)
    adj = topo500.ta_map.adjacency
    for anchor in topo500.ta_map.ta_ids[:10]:
        tal = make_tal(anchor, 16, topo500.ta_map, rng, policy="anchor")
        assert set(tal.ta_ids[1:]) <= adj[anchor]


def _timeline(ue, enbs, tas):
    return AttachmentTimeline(ue, np.arange(len(enbs)), np.asarray(enbs), np.asarray(tas))


def _small_map():
    return TrackingAreaMap({0: frozenset({0, 1}), 1: frozenset({2})}, {0: frozenset({1}), 1: frozenset({0})})


def test_zero_fraction_gives_no_pages():
    rep = run_sim([_timeline(0, [0] * 10, [0] * 10)], _small_map(), traffic=TrafficConfig(0.0, 36))
    assert rep.total_pages == 0 and rep.page_records == []


def test_single_ue_suppression_arithmetic():
    rep = run_sim([_timeline(0, [0] * 72, [0] * 72)], _small_map(), "conventional",
                  traffic=TrafficConfig(1.0, 36))
    assert [r.tick for r in rep.page_records] == [0, 36]
    assert all(sorted(r.enbs_paged.tolist()) == [0, 1] for r in rep.page_records)
    assert rep.per_enb_pages == {0: 2, 1: 2, 2: 0}
    assert rep.suppressed == 70


def test_mismatched_ticks_raise():
    a = _timeline(0, [0] * 5, [0] * 5)
    b = _timeline(1, [0] * 6, [0] * 6)
    with pytest.raises(SimulationError):
        run_sim([a, b], _small_map())


@pytest.fixture(scope="module")
def timelines(topo500):
    traces = synth_traces(topo500.region, 100, 100, 200, seed=5)
    return attach_all(traces, topo500.locator, topo500.ta_map)


def _recount(report: SimReport) -> Counter:
    c: Counter = Counter()
    for r in report.page_records:
        for e in r.enbs_paged.tolist():
            c[e] += 1
    return c


@pytest.mark.parametrize("mode,L", [("conventional", 1), ("tal", 4), ("tal", 16)])
def test_page_accounting_conservation(timelines, topo500, mode, L):
    rep = run_sim(timelines, topo500.ta_map, mode, L, seed=3)
    rc = _recount(rep)
    assert all(rep.per_enb_pages[e] == rc.get(e, 0) for e in rep.per_enb_pages)
    assert rep.total_pages == sum(len(r.enbs_paged) for r in rep.page_records)


def test_records_fan_out_to_current_ta_or_tal(timelines, topo500):
    by_ue = {tl.ue_id: tl for tl in timelines}
    conv = run_sim(timelines, topo500.ta_map, "conventional", seed=3)
    for r in conv.page_records:
        ta = by_ue[r.target_ue].ta_ids[r.tick]
        assert r.broadcast_tas == (ta,)
        assert set(r.enbs_paged.tolist()) == topo500.ta_map.tas[ta]
    tal = run_sim(timelines, topo500.ta_map, "tal", 8, seed=3)
    for r in tal.page_records:
        ta = by_ue[r.target_ue].ta_ids[r.tick]
        assert ta in r.broadcast_tas and len(r.broadcast_tas) <= 8
        want = set().union(*(topo500.ta_map.tas[t] for t in r.broadcast_tas))
        assert set(r.enbs_paged.tolist()) == want


def test_no_page_while_busy(timelines, topo500):
    rep = run_sim(timelines, topo500.ta_map, "tal", 4, TrafficConfig(0.2, 30), seed=1)
    last: dict = {}
    for r in rep.page_records:
        if r.target_ue in last:
            assert r.tick - last[r.target_ue] >= 30
        last[r.target_ue] = r.tick


def test_enbs_with_users_recount(timelines, topo500):
    rep = run_sim(timelines, topo500.ta_map, "tal", 4, seed=2)
    occ = [Counter() for _ in range(200)]
    for tl in timelines:
        for t, e in enumerate(tl.enb_ids.tolist()):
            occ[t][e] += 1
    for r in rep.page_records[:300]:
        assert r.enbs_with_users == sum(1 for e in r.enbs_paged.tolist() if occ[r.tick][e] > 0)
        assert r.network_enbs_with_users == len(occ[r.tick])


def test_determinism_and_monotone_total(timelines, topo500):
    a = run_sim(timelines, topo500.ta_map, "tal", 8, seed=4)
    b = run_sim(timelines, topo500.ta_map, "tal", 8, seed=4)
    assert a.to_json() == b.to_json()
    totals = [run_sim(timelines, topo500.ta_map, "tal", L, seed=4).total_pages for L in (1, 2, 4, 8, 16)]
    assert all(x < y for x, y in zip(totals, totals[1:]))
    conv = run_sim(timelines, topo500.ta_map, "conventional", seed=4)
    assert conv.total_pages < totals[-1]


def test_report_json_round_trip(timelines, topo500):
    rep = run_sim(timelines, topo500.ta_map, "tal", 2, seed=1)
    again = SimReport.from_json(rep.to_json())
    assert again.to_json() == rep.to_json()


def test_budget_constant():
    assert hourly_page_budget(525) == 1_890_000


def _report(loads: dict, n_ues: int, ticks: int = 720) -> SimReport:
    return SimReport(loads, [], {"mode": "tal", "tal_length": 1, "n_ues": n_ues, "duration_ticks": ticks}, 0, 0)


def test_capacity_when_budget_exactly_met():
    cap = capacity_estimate(_report({1: 1_890_000, 2: 10}, 50_000), hourly_page_budget(525))
    assert cap.max == 50_000


def test_capacity_zero_load_is_unbounded():
    cap = capacity_estimate(_report({1: 0, 2: 0}, 100), 1000)
    assert cap.max is UNBOUNDED and cap.median is UNBOUNDED
    assert cap.as_row()["capacity_max"] == "unbounded"
    with pytest.raises(SimulationError):
        capacity_estimate(_report({1: 1}, 10, ticks=100), 1000)


def test_wider_fanout_never_raises_max_capacity(topo500):
    traces = synth_traces(topo500.region, 100, 100, 720, seed=6)
    tls = attach_all(traces, topo500.locator, topo500.ta_map)
    budget = hourly_page_budget()
    caps = [capacity_estimate(run_sim(tls, topo500.ta_map, "tal", L, seed=6), budget).max for L in (1, 2, 4, 8, 16)]
    assert all(b <= a for a, b in zip(caps, caps[1:]))


def test_paging_log_examples():
    s = analyze_paging_log([(0.0, "x"), (0.5, "x"), (2.0, "x")])
    assert s.counts == {"x": 2} and s.intervals == [2.0]
    s = analyze_paging_log([(0.0, "a"), (1.0, "b"), (2.0, "c")])
    assert s.counts == {"a": 1, "b": 1, "c": 1} and s.intervals == []
    s = analyze_paging_log([])
    assert s.counts == {} and s.intervals == []
    with pytest.raises(ValueError):
        analyze_paging_log([(2.0, "a"), (1.0, "a")])


def test_shared_imsi_log_has_one_identifier(timelines, topo500):
    rep = run_sim(timelines, topo500.ta_map, "tal", 4, seed=1)
    shared = analyze_paging_log(paging_log_from_report(rep, shared_imsi=True))
    assert len(shared.counts) == 1
    unique = analyze_paging_log(paging_log_from_report(rep, shared_imsi=False))
    assert len(unique.counts) == len({r.target_ue for r in rep.page_records})


def test_page_record_dict_round_trip():
    r = PageRecord(3, 9, 4, (1, 2), np.array([4, 5, 6]), 2, 7)
    back = PageRecord.from_dict(r.to_dict())
    assert back.to_dict() == r.to_dict()
