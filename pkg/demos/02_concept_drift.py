"""Page-Hinkley drift detection, from a toy stream to environment changes.

The detector compares each value with the running mean of the stream it
watches. An alarm is raised once the cumulative deviation leaves a band of
width ``lambda``; ``delta`` is the tolerated per-sample deviation.

Run with ``python3 demos/02_concept_drift.py`` (a few seconds).
"""
import numpy as np

from qosbench.drift import PhConfig, detect_drifts, regime_drift_count
from qosbench.splits import split
from qosbench.features import train_runs_of
from qosbench.traces import GeneratorConfig, filter_env, generate, preprocess, select_direction

print("toy stream [0, 0, 0, 10] with delta=0, lambda=4 -> alarm at sample",
      detect_drifts([0, 0, 0, 10], PhConfig(delta=0.0, lambda_=4.0)).alarm_indices + 1)

rng = np.random.default_rng(0)
stream = np.r_[rng.normal(0, 1, 500), rng.normal(3, 1, 500)]
log = detect_drifts(stream, PhConfig(delta=0.5, lambda_=20.0))
print(f"unit-variance stream whose mean moves 0 -> 3 at sample 500: first alarm at {log.alarm_indices[0]}")
print("adding 100 to every value changes nothing:",
      np.array_equal(detect_drifts(stream + 100, PhConfig(delta=0.5, lambda_=20.0)).alarm_indices, log.alarm_indices))

# Environment changes: delta is tied to the spread of the training region's RSRP.
runs = select_direction(preprocess(generate(GeneratorConfig(seed=3, n_runs=4, run_duration=2400.0))), "dl")
suburban, highway, rural = (filter_env(runs, e) for e in ("suburban", "highway", "rural"))
sp = split(suburban, "folds", seed=0)
train = train_runs_of(suburban, sp)
held_out = [r.with_frame(r.frame[~m]) for r, m in zip(suburban, sp.masks) if (~m).any()]
print("\nRSRP drifts seen by a model trained on suburban drives")
print(f"{'sigma multiplier':>18} {'held-out suburban':>18} {'highway':>8} {'rural':>6}")
for k in (1.0, 2.0):
    counts = [regime_drift_count(train, test, sigma_multiplier=k) for test in (held_out, highway, rural)]
    print(f"{k:>18.0f} {counts[0]:>18d} {counts[1]:>8d} {counts[2]:>6d}")
