"""How the evaluation protocol and the available features move the error.

Runs small experiment grids with a reduced gradient-boosting model (150 trees
instead of 715) so the script finishes in under a minute:

* the four split strategies -- random splitting leaks neighbouring samples
  into the test set and looks best;
* access scenarios -- adding base-station load (MDNET) to modem data (MD);
* sampling periods -- coarser measurement hurts;
* training on suburban drives and testing on highway drives.

Run with ``python3 demos/03_splits_scenarios_and_sampling.py``.
"""
import warnings

from qosbench.evaluation import GridSpec, run_grid
from qosbench.splits import STRATEGIES
from qosbench.traces import GeneratorConfig, cell_sites, generate, preprocess, select_direction

warnings.simplefilter("ignore", RuntimeWarning)
SEED = 1
cfg = GeneratorConfig(seed=SEED, n_runs=4, run_duration=1500.0)
runs = select_direction(preprocess(generate(cfg)), "dl")
sites = cell_sites(cfg)
gb = {"gradient_boosting": {"n_estimators": 150}}
print(f"{sum(len(r) for r in runs)} downlink samples in {len(runs)} runs\n")

g = run_grid(runs, GridSpec(splits=STRATEGIES, scenarios=("MD", "MDNET", "FULL"), model_params=gb),
             seed=SEED, sites=sites)
print("MAE (Mbit/s) by split strategy and access scenario")
print(f"{'':>8}" + "".join(f"{s:>8}" for s in STRATEGIES))
for sc in ("MD", "MDNET", "FULL"):
    print(f"{sc:>8}" + "".join(f"{g.value('mae', split=s, scenario=sc):8.2f}" for s in STRATEGIES))
for row in g.split_comparisons():
    if row["scenario"] == "FULL":
        print(f"\nFULL: random split MAE is {row['random_lower_than_folds']:.0%} below folds "
              f"(equivalently, folds is {row['folds_higher_than_random']:.0%} above random)")

g = run_grid(runs, GridSpec(periods_s=(1, 2, 5, 10), model_params=gb), seed=SEED, sites=sites)
print("\nMAE by sampling period:",
      {f"{p:g} s": round(g.value("mae", period_s=float(p)), 2) for p in (1, 2, 5, 10)})

g = run_grid(runs, GridSpec(regimes=(("suburban", "suburban"), ("suburban", "highway")), model_params=gb),
             seed=SEED, sites=sites)
print("trained on suburban: R2 on suburban "
      f"{g.value('r2', test_env='suburban'):.2f}, on highway {g.value('r2', test_env='highway'):.2f}")
