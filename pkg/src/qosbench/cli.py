"""Command-line entry point: one subcommand per experiment family.

Every command reads a JSON workbench configuration, writes its outputs
under ``<out>/<command>/`` and finishes with a ``manifest.json`` listing
each emitted file with its SHA-256 digest next to the resolved
configuration. Exit status is 0 on success, 1 for usage or configuration
errors and 2 when the computation itself fails.

Configuration keys (all optional except where a command needs them)::

    seed            global seed (default 0)
    out             output directory (default "qosbench-out")
    traces          {"generate": {GeneratorConfig fields}}
                    or {"csv": "traces.csv", "sites": "cell_sites.json"}
    preprocess      {"min_speed": 2.0, "min_park_duration": 60.0, "enabled": true}
    resample        {"features": [...], "ratios": [2, 5, 10]}
    stationarity    {"features": ["sinr_db"], "stride": 10, "max_lag": null,
                     "acf_max_lag": 100, "max_runs": null}
    drift           {"feature": "rsrp_dbm", "train_env": "suburban",
                     "test_envs": ["highway", "suburban"], "sigma_multipliers": [1, 2],
                     "lambda_factor": 5.0, "two_sided": true, "direction": "dl"}
    split_viz       {"strategies": [...], "scenario": "MD", "direction": "dl"}
    grid            GridSpec fields (see qosbench.evaluation.GridSpec)
    explain         {"model": "gradient_boosting", "scenario": "FULL", "split": "folds",
                     "directions": ["dl", "ul"], "n_background": 100, "n_instances": 100,
                     "ale_features": ["rsrp_dbm", "sinr_db"], "ale_bins": 20,
                     "model_params": {}, "svg": true}

``--seed`` overrides both the global seed and the generator seed;
``--out`` overrides the output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .drift import REGIME_FEATURE, REGIME_LAMBDA_FACTOR, PhConfig, detect_drifts, regime_drift_count, write_drift_table
from .evaluation import GridSpec, run_grid
from .explain import ale, ale_svg, beeswarm_svg, sample_background, shap_summary
from .features import ACCESS_SCENARIOS, assemble, build_rem, train_runs_of
from .models import KINDS, ModelSpec, fit
from .resample import speed_binned_mae, write_binned_csv
from .splits import STRATEGIES, pca_project, split
from .stationarity import accumulated_adf, autocorrelation
from .traces import (
    AR_FEATURES,
    DIRECTIONS,
    ENVS,
    GeneratorConfig,
    cell_sites,
    filter_env,
    generate,
    load_cell_sites,
    load_csv,
    preprocess,
    save_cell_sites,
    save_csv,
    select_direction,
)

COMMANDS = ("generate", "resample-study", "stationarity", "drift", "split-viz", "experiment", "explain")
TOP_KEYS = {"seed", "out", "traces", "preprocess", "resample", "stationarity", "drift", "split_viz", "grid",
            "explain"}

SECTION_DEFAULTS = {
    "preprocess": {"min_speed": 2.0, "min_park_duration": 60.0, "enabled": True},
    "resample": {"features": list(AR_FEATURES[:4]), "ratios": [2, 5, 10]},
    "stationarity": {"features": ["sinr_db"], "stride": 10, "max_lag": None, "acf_max_lag": 100, "max_runs": None},
    "drift": {"feature": REGIME_FEATURE, "train_env": "suburban", "test_envs": ["highway", "suburban"],
              "sigma_multipliers": [1.0, 2.0], "lambda_factor": REGIME_LAMBDA_FACTOR, "two_sided": True,
              "direction": "dl"},
    "split_viz": {"strategies": list(STRATEGIES), "scenario": "MD", "direction": "dl"},
    "explain": {"model": "gradient_boosting", "scenario": "FULL", "split": "folds", "directions": ["dl", "ul"],
                "n_background": 100, "n_instances": 100, "ale_features": ["rsrp_dbm", "sinr_db"], "ale_bins": 20,
                "model_params": {}, "svg": True},
}


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# configuration


def _section(cfg: dict, name: str) -> dict:
    raw = cfg.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a JSON object")
    defaults = SECTION_DEFAULTS[name]
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    return {**defaults, **raw}


def _check_in(field: str, values, allowed) -> None:
    for v in values if isinstance(values, list) else [values]:
        if v not in allowed:
            raise ConfigError(field, f"unknown value {v!r}")


def resolve_config(raw: dict, seed: int | None, out: str | None) -> dict:
    """Validate a raw configuration and fill defaults; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    cfg = {"seed": raw.get("seed", 0), "out": raw.get("out", "qosbench-out")}
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    traces = raw.get("traces", {"generate": {}})
    if not isinstance(traces, dict) or len(set(traces) & {"generate", "csv"}) != 1:
        raise ConfigError("traces", "give exactly one of 'generate' or 'csv'")
    extra = set(traces) - {"generate", "csv", "sites"}
    if extra:
        raise ConfigError(f"traces.{sorted(extra)[0]}", "unknown field")
    if "generate" in traces:
        gen = dict(traces["generate"])
        if seed is not None or "seed" not in gen:
            gen["seed"] = cfg["seed"]
        try:
            gcfg = GeneratorConfig.from_dict(gen)
        except (TypeError, ValueError) as exc:
            raise ConfigError("traces.generate", str(exc)) from None
        cfg["traces"] = {"generate": gcfg.to_dict()}
    else:
        if not isinstance(traces["csv"], str):
            raise ConfigError("traces.csv", "must be a path string")
        cfg["traces"] = {"csv": traces["csv"], "sites": traces.get("sites")}
    for name in SECTION_DEFAULTS:
        cfg[name] = _section(raw, name)
    _check_in("resample.features", cfg["resample"]["features"], AR_FEATURES)
    for r in cfg["resample"]["ratios"]:
        if not isinstance(r, int) or r < 1:
            raise ConfigError("resample.ratios", f"ratio must be an integer >= 1, got {r!r}")
    if not isinstance(cfg["stationarity"]["stride"], int) or cfg["stationarity"]["stride"] < 1:
        raise ConfigError("stationarity.stride", "must be an integer >= 1")
    _check_in("drift.train_env", cfg["drift"]["train_env"], ENVS)
    _check_in("drift.test_envs", cfg["drift"]["test_envs"], ENVS)
    _check_in("drift.direction", cfg["drift"]["direction"], DIRECTIONS)
    _check_in("split_viz.strategies", cfg["split_viz"]["strategies"], STRATEGIES)
    _check_in("split_viz.scenario", cfg["split_viz"]["scenario"], ACCESS_SCENARIOS)
    _check_in("split_viz.direction", cfg["split_viz"]["direction"], DIRECTIONS)
    ex = cfg["explain"]
    _check_in("explain.model", ex["model"], KINDS)
    _check_in("explain.scenario", ex["scenario"], ACCESS_SCENARIOS)
    _check_in("explain.split", ex["split"], STRATEGIES)
    _check_in("explain.directions", ex["directions"], DIRECTIONS)
    try:
        ModelSpec(ex["model"], ex["model_params"])
    except ValueError as exc:
        raise ConfigError("explain.model_params", str(exc)) from None
    grid = raw.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("grid", "must be a JSON object")
    unknown = set(grid) - set(GridSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"grid.{sorted(unknown)[0]}", "unknown field")
    for axis, allowed in (("models", KINDS), ("scenarios", ACCESS_SCENARIOS), ("splits", STRATEGIES),
                          ("directions", DIRECTIONS)):
        if axis in grid:
            if not isinstance(grid[axis], list) or not grid[axis]:
                raise ConfigError(f"grid.{axis}", "must be a non-empty list")
            _check_in(f"grid.{axis}", grid[axis], allowed)
    try:
        cfg["grid"] = GridSpec.from_dict(grid).to_dict()
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from None
    return cfg


# --------------------------------------------------------------------------
# helpers


def _load_traces(cfg: dict):
    src = cfg["traces"]
    if "generate" in src:
        gcfg = GeneratorConfig.from_dict(src["generate"])
        runs, sites = generate(gcfg), cell_sites(gcfg)
    else:
        runs = load_csv(src["csv"])
        sites = load_cell_sites(src["sites"]) if src.get("sites") else None
    pp = cfg["preprocess"]
    if pp["enabled"]:
        runs = preprocess(runs, pp["min_speed"], pp["min_park_duration"])
    if not runs:
        raise RuntimeError("no samples left after preprocessing")
    return runs, sites


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def manifest(self, command: str, cfg: dict) -> Path:
        entries = []
        for p in self.files:
            data = p.read_bytes()
            entries.append({"path": p.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {"command": command, "version": __version__, "seed": cfg["seed"], "config": cfg, "files": entries}
        m = self.root / "manifest.json"
        m.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return m


def _safe(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in s)


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg, out: _Outputs):
    if "generate" not in cfg["traces"]:
        raise ConfigError("traces", "the generate command needs a 'generate' trace source")
    gcfg = GeneratorConfig.from_dict(cfg["traces"]["generate"])
    runs = generate(gcfg)
    save_csv(runs, out.path("traces.csv"))
    save_cell_sites(cell_sites(gcfg), out.path("cell_sites.json"))
    out.path("generator_config.json").write_text(gcfg.to_json() + "\n", encoding="utf-8")


def cmd_resample(cfg, out: _Outputs):
    runs, _ = _load_traces(cfg)
    rs = cfg["resample"]
    rows = [(f, int(M), speed_binned_mae(runs, f, int(M))) for f in rs["features"] for M in rs["ratios"]]
    write_binned_csv(out.path("speed_binned_error.csv"), rows)


def cmd_stationarity(cfg, out: _Outputs):
    runs, _ = _load_traces(cfg)
    st = cfg["stationarity"]
    if st["max_runs"] is not None:
        runs = runs[: int(st["max_runs"])]
    for run in runs:
        tag = _safe(f"{run.run_id}_{run.device_id}")
        for f in st["features"]:
            x = run.frame[f].to_numpy(dtype=float)
            accumulated_adf(x, st["stride"], st["max_lag"]).to_csv(out.path(f"adf_{tag}_{f}.csv"))
            lag = min(int(st["acf_max_lag"]), x.size - 1)
            with out.path(f"acf_{tag}_{f}.csv").open("w", encoding="utf-8") as fh:
                fh.write("lag,acf\n")
                for k, v in enumerate(autocorrelation(x, lag)):
                    fh.write(f"{k},{v!r}\n")


def cmd_drift(cfg, out: _Outputs):
    runs, _ = _load_traces(cfg)
    dc = cfg["drift"]
    runs = select_direction(runs, dc["direction"])
    source = filter_env(runs, dc["train_env"])
    if not source:
        raise RuntimeError(f"no samples in training environment {dc['train_env']!r}")
    sp = split(source, "folds", seed=cfg["seed"])
    train = train_runs_of(source, sp)
    held_out = [r.with_frame(r.frame[~m]) for r, m in zip(source, sp.masks) if (~m).any()]
    table = []
    for mult in dc["sigma_multipliers"]:
        for env in dc["test_envs"]:
            test = held_out if env == dc["train_env"] else filter_env(runs, env)
            n = regime_drift_count(train, test, dc["feature"], float(mult), dc["lambda_factor"], dc["two_sided"]) \
                if test else 0
            table.append({"train_env": dc["train_env"], "sigma_multiplier": mult, "test_env": env, "drifts": n})
    write_drift_table(out.path("drift_table.csv"), table)
    # full drives through every environment, thresholds from the training region
    sigma = float(np.std(np.concatenate([r.frame[dc["feature"]].to_numpy(dtype=float) for r in train])))
    for mult in dc["sigma_multipliers"]:
        delta = float(mult) * sigma
        pc = PhConfig(delta=delta, lambda_=dc["lambda_factor"] * delta, two_sided=dc["two_sided"])
        for run in runs:
            log = detect_drifts(run.frame[dc["feature"]].to_numpy(dtype=float), pc)
            log.to_csv(out.path(f"drift_log_{_safe(run.run_id)}_{mult:g}sigma.csv"))


def cmd_split_viz(cfg, out: _Outputs):
    runs, sites = _load_traces(cfg)
    sv = cfg["split_viz"]
    runs = select_direction(runs, sv["direction"])
    for strat in sv["strategies"]:
        sp = split(runs, strat, seed=cfg["seed"])
        sp.to_csv(runs, out.path(f"split_{strat}.csv"))
        rem = build_rem(train_runs_of(runs, sp)) if "REM" in ACCESS_SCENARIOS[sv["scenario"]] else None
        train, test = assemble(runs, sv["scenario"], sp, rem, sites=sites, direction=sv["direction"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            proj = pca_project(train.X, test.X)
        proj.to_csv(out.path(f"pca_{strat}.csv"))


def cmd_experiment(cfg, out: _Outputs):
    runs, sites = _load_traces(cfg)
    grid = run_grid(runs, GridSpec.from_dict(cfg["grid"]), seed=cfg["seed"], sites=sites)
    grid.to_long_csv(out.path("grid.csv"))
    grid.write_json(out.path("grid_summary.json"))
    failed = [c for c in grid.cells if not c.ok]
    for c in failed:
        print(f"cell failed: {c.coords}: {c.error}", file=sys.stderr)
    if failed and len(failed) == len(grid.cells):
        raise RuntimeError("every grid cell failed")


def cmd_explain(cfg, out: _Outputs):
    runs, sites = _load_traces(cfg)
    ex = cfg["explain"]
    seed = cfg["seed"]
    for d in ex["directions"]:
        rd = select_direction(runs, d)
        if not rd:
            raise RuntimeError(f"no {d} runs to explain")
        sp = split(rd, ex["split"], seed=seed)
        rem = build_rem(train_runs_of(rd, sp)) if "REM" in ACCESS_SCENARIOS[ex["scenario"]] else None
        train, test = assemble(rd, ex["scenario"], sp, rem, sites=sites, direction=d)
        model = fit(ModelSpec(ex["model"], ex["model_params"], seed=seed), train)
        bg = sample_background(train.X, ex["n_background"], seed)
        inst = sample_background(test.X, ex["n_instances"], seed + 1)
        summ = shap_summary(model, inst, bg, seed=seed)
        summ.importance_csv(out.path(f"shap_importance_{d}.csv"))
        summ.beeswarm_csv(out.path(f"shap_beeswarm_{d}.csv"))
        if ex["svg"]:
            beeswarm_svg(summ, out.path(f"shap_beeswarm_{d}.svg"), seed=seed)
        for f in ex["ale_features"]:
            if f not in model.columns:
                raise ConfigError("explain.ale_features", f"{f!r} is not a feature of scenario {ex['scenario']}")
            curve = ale(model, train.X, f, ex["ale_bins"])
            curve.to_csv(out.path(f"ale_{d}_{f}.csv"))
            if ex["svg"]:
                ale_svg(curve, out.path(f"ale_{d}_{f}.svg"))


HANDLERS = {
    "generate": cmd_generate, "resample-study": cmd_resample, "stationarity": cmd_stationarity,
    "drift": cmd_drift, "split-viz": cmd_split_viz, "experiment": cmd_experiment, "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qosbench", description="Vehicular throughput-prediction workbench.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    helps = {
        "generate": "write synthetic traces and the cell-site sidecar",
        "resample-study": "speed-binned reconstruction error per feature and ratio",
        "stationarity": "accumulated ADF p-values and autocorrelation per run",
        "drift": "Page-Hinkley drift counts per test region and drift logs",
        "split-viz": "split assignments and PCA projections per strategy",
        "experiment": "run the configured experiment grid",
        "explain": "SHAP summaries and ALE curves",
    }
    for name in COMMANDS:
        c = sub.add_parser(name, help=helps[name])
        c.add_argument("--config", help="workbench configuration JSON (defaults apply when omitted)")
        c.add_argument("--out", help="output directory (overrides the config)")
        c.add_argument("--seed", type=int, help="global seed (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        cfg = resolve_config(raw, args.seed, args.out)
    except ConfigError as exc:
        print(f"qosbench: config error: {exc}", file=sys.stderr)
        return 1
    out = _Outputs(Path(cfg["out"]) / args.command)
    try:
        HANDLERS[args.command](cfg, out)
        out.manifest(args.command, cfg)
    except ConfigError as exc:
        print(f"qosbench: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"qosbench: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(str(out.root / "manifest.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
