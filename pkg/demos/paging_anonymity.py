"""
Paging cost against anonymity as the tracking-area list grows.

Builds one synthetic city, drives 1000 UEs through it for an hour and
sweeps the TAL length. Run from the repo root: python demos/paging_anonymity.py
"""
import numpy as np

from pgpp.anonymity import area_anonymity, degree_of_anonymity, global_bulk_anonymity
from pgpp.mobility import attach_all, synth_traces
from pgpp.paging import capacity_estimate, hourly_page_budget, run_sim
from pgpp.topology import synth_topology

topo = synth_topology(n_sites=500, n_tas=50, seed=0)
traces = synth_traces(topo.region, 500, 500, 720, 0)  # cars, pedestrians, 5 s ticks
timelines = attach_all(traces, topo.locator, topo.ta_map)
n_enbs = len(topo.enb_ids)

# the entropy metric on its own: one candidate out of N is no anonymity
print("d(1, N)      =", degree_of_anonymity(1, n_enbs))
print("d(N, N)      =", degree_of_anonymity(n_enbs, n_enbs))

budget = hourly_page_budget(525)
print(f"{'mode':>12} {'L':>3} {'pages':>9} {'d_global':>8} {'area km2':>9} {'max users':>10}")
for mode, L in [("conventional", 1), ("tal", 1), ("tal", 2), ("tal", 4), ("tal", 8), ("tal", 16)]:
    rep = run_sim(timelines, topo.ta_map, mode, L, seed=0)
    d = global_bulk_anonymity(rep, n_enbs) if mode == "tal" else 0.0
    area = area_anonymity(rep, topo).median
    cap = capacity_estimate(rep, budget).max
    print(f"{mode:>12} {L:>3} {rep.total_pages:>9} {d:>8.3f} {area:>9.1f} {cap:>10,.0f}")

# where the load lands: busiest and median eNB at L = 16
rep = run_sim(timelines, topo.ta_map, "tal", 16, seed=0)
pages = np.array(list(rep.per_enb_pages.values()))
print("per-eNB pages at L=16: median", np.median(pages), "max", pages.max())
