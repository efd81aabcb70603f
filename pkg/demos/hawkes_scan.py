"""Scan an event stream that switches from Poisson to self-exciting.

Events arrive at rate 1 until time 300, after which each event excites
further events with magnitude 0.6 and unit decay.  The ACM scan re-estimates
the magnitude per branch by stochastic gradient ascent on the window
log-likelihood and alarms once the log-ratio statistic passes the threshold.

Run:  python demos/hawkes_scan.py [threshold]
"""
import sys

import numpy as np

from omdcpd.pointproc import HawkesSpec, ScanConfig, scan_events, simulate_hawkes

b = float(sys.argv[1]) if len(sys.argv) > 1 else 9.0
rng = np.random.default_rng(7)
stream = simulate_hawkes(HawkesSpec(baseline=1.0, decay=1.0, magnitude=0.6, change_time=300.0), 600.0, rng)
n_pre = int(np.count_nonzero(stream.times < 300.0))
print(f"{len(stream)} events, {n_pre} before the change at time 300")

cfg = ScanConfig(kind="acm", baseline=1.0, decay=1.0, length=10.0)
for alarm in scan_events(stream.times, cfg, b):
    if alarm.stopped:
        t = stream.times[alarm.stop_time - 1]
        print(f"alarm at event {alarm.stop_time} (time {t:.1f}), statistic {alarm.statistic:.2f}")
        break
else:
    print("no alarm")
