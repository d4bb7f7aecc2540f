"""
Many UEs attaching under one shared IMSI.

With one HSS counter behind the shared identity, every UE after the first
trips one sync failure before it gets a vector bound to its own counter.
Run from the repo root: python demos/shared_imsi_aka.py
"""
import numpy as np

from pgpp.aka import run_mass_attach, sequential_failure_law

print("sequential law, n=10:", sequential_failure_law(10))

for shared in (True, False):
    run = run_mass_attach(200, shared_imsi=shared, seed=0)
    fails = np.array([o.sync_failures for o in run.outcomes])
    delay = np.array([o.total_delay_ms for o in run.outcomes])
    print(f"shared={shared!s:5}  sync failures {fails.sum():4}  "
          f"median delay {np.median(delay):7.1f} ms  p95 {np.percentile(delay, 95):7.1f} ms  "
          f"HSS counters {sum(run.hss_sqn.values())}")
