"""Which features drive the throughput prediction, and how.

Fits a reduced gradient-boosting model (150 trees) on the FULL feature set,
ranks features by mean |SHAP| for downlink and uplink, and prints the
accumulated local effect of SINR (downlink) and RSRP (uplink, where transmit
power headroom rather than interference limits the rate).

Run with ``python3 demos/04_explanations.py`` (under a minute).
"""
import warnings

import numpy as np

from qosbench.explain import ale, sample_background, shap_summary
from qosbench.features import assemble, build_rem, train_runs_of
from qosbench.models import ModelSpec, fit
from qosbench.splits import split
from qosbench.traces import GeneratorConfig, cell_sites, generate, preprocess, select_direction

warnings.simplefilter("ignore", RuntimeWarning)
SEED = 2
cfg = GeneratorConfig(seed=SEED, n_runs=4, run_duration=1500.0)
runs = preprocess(generate(cfg))
sites = cell_sites(cfg)

for direction in ("dl", "ul"):
    rd = select_direction(runs, direction)
    sp = split(rd, "folds", seed=SEED)
    train, test = assemble(rd, "FULL", sp, build_rem(train_runs_of(rd, sp)), sites=sites)
    model = fit(ModelSpec("gradient_boosting", {"n_estimators": 150}, seed=SEED), train)
    summ = shap_summary(model, sample_background(test.X, 40, SEED + 1), sample_background(train.X, 40, SEED),
                        n_coalitions=512, seed=SEED)
    order = np.argsort(-summ.mean_abs)[:6]
    print(f"{direction}: mean |SHAP| (Mbit/s), top six of {len(summ.features)} features")
    for i in order:
        print(f"    {summ.features[i]:<18} {summ.mean_abs[i]:.2f}")
    feature = "sinr_db" if direction == "dl" else "rsrp_dbm"
    curve = ale(model, test.X, feature, n_bins=8)
    pts = ", ".join(f"{e:.0f}: {v:+.1f}" for e, v in zip(curve.bin_edges, curve.effect))
    print(f"  ALE of {feature} (dB or dBm: Mbit/s): {pts}\n")
