"""A small version of the Gamma rate-change benchmark.

Calibrates ACM, GLR and a CUSUM tuned to rate 2 at ARL 200, then measures
detection delay when the exponential rate moves from 1 to 0.5 or to 5.  The
output is the same CSV the ``omdcpd run`` command writes.

Run:  python demos/gamma_rate_table.py
"""
from omdcpd.bench.experiments import ExperimentConfig, run_experiment, rows_to_csv

cfg = ExperimentConfig.default("table2", seed=3)
cfg.gamma, cfg.trials = 200.0, 400
cfg.sweep = [0.5, 5.0]
cfg.detectors = [d for d in cfg.detectors if d["name"] in ("CUSUM", "GLR", "ACM")]
print(rows_to_csv(run_experiment(cfg)), end="")
