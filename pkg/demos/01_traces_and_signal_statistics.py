"""Generate drives, then look at what the signal statistics say about them.

Walks through trace generation and preprocessing, the reconstruction error of
averaging downsampling against vehicle speed, the accumulated ADF p-value of a
SINR series, and the SINR autocorrelation.

Run with ``python3 demos/01_traces_and_signal_statistics.py`` (a few seconds).
"""
import numpy as np

from qosbench.resample import reconstruction_error, speed_binned_mae
from qosbench.stationarity import accumulated_adf, adf_test, autocorrelation
from qosbench.traces import GeneratorConfig, generate, preprocess, select_direction

cfg = GeneratorConfig(seed=7, n_runs=4, run_duration=2400.0)
raw = generate(cfg)
runs = preprocess(raw)
print(f"generated {len(raw)} runs, {sum(len(r) for r in raw)} samples; "
      f"after removing TCP and parked stretches: {sum(len(r) for r in runs)} samples")
for r in runs:
    envs = r.frame["env"].value_counts().to_dict()
    print(f"  run {r.run_id:<10} {r.direction}  {len(r):5d} samples  {envs}")

# A hand-sized example: blocks of two are replaced by their mean.
res = reconstruction_error([0.0, 2.0, 4.0, 6.0], 2)
print("\n[0, 2, 4, 6] downsampled by 2 ->", res.x_ds.tolist(), "reconstructed ->", res.x_rs.tolist(),
      "error ->", res.re.tolist())

# Averaging over longer windows hurts most at high speed, where the channel changes fastest.
print("\nmean |reconstruction error| of RSRP (dB) per speed bin (every other 10 km/h bin shown)")
for M in (2, 5, 10):
    binned = speed_binned_mae(runs, "rsrp_dbm", M)
    cells = [f"{lo:>3.0f}:{m:5.2f}" for lo, m, n in zip(binned.bin_lo, binned.mae_per_bin, binned.count_per_bin)
             if n >= 50 and lo % 20 == 0]
    print(f"  M={M:>2}  " + "  ".join(cells))

# Stationarity: the ADF p-value on growing prefixes of one SINR series.
sinr = runs[0].frame["sinr_db"].to_numpy()
acc = accumulated_adf(sinr, stride=200)
print("\naccumulated ADF p-value of SINR, run", runs[0].run_id)
for t, p in zip(acc.t, acc.p_values):
    if np.isnan(p):  # prefix too short to test
        continue
    print(f"  first {t + 1:5d} samples: p = {p:.3g}")
print("whole series:", adf_test(sinr))

# Temporal correlation: neighbouring samples are nearly identical.
rho = autocorrelation(sinr, 30)
print("\nSINR autocorrelation at lags 1, 5, 10, 30 s:", np.round(rho[[1, 5, 10, 30]], 3).tolist())

dl = select_direction(runs, "dl")
print(f"\n{len(dl)} downlink runs; mean downlink throughput "
      f"{np.mean(np.concatenate([r.frame['tput_dl_mbps'].to_numpy() for r in dl])):.1f} Mbit/s")
