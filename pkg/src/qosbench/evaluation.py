"""Regression metrics and the experiment grid driver.

A grid is the cross product of models, access scenarios, split strategies,
feature sampling periods, prediction horizons, (train, test) environment
pairs and traffic directions. Each cell runs split -> REM -> assemble ->
fit -> predict -> metrics with seeds derived from the cell coordinates, so
any subset of cells can be re-run on its own and reproduce the same numbers.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import DEFAULT_REM_RESOLUTION, ACCESS_SCENARIOS, assemble, build_rem, train_runs_of
from .models import KINDS, ModelSpec, fit, predict
from .resample import downsample, reconstruct
from .splits import STRATEGIES, split
from .traces import DIRECTIONS, ENVS, filter_env, select_direction

MAPE_EPS = 1e-6
METRIC_NAMES = ("mae", "mape", "medae", "rmse", "r2")
LONG_CSV_COLUMNS = ("model", "scenario", "split", "period_s", "horizon_s", "train_env", "test_env",
                    "direction", "metric", "value")
ALL_ENVS = "all"

# columns that are reported values, not averaged quantities: a slower logger
# reports the value seen at the start of each block
_HELD_COLUMNS = ("cell_id", "env", "protocol")
_NATIVE_COLUMNS = ("t_ms", "tput_dl_mbps", "tput_ul_mbps")


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mape: float
    medae: float
    rmse: float
    r2: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def metrics(y_true, y_pred) -> MetricReport:
    """MAE, MAPE (fraction), MedAE, RMSE and R².

    MAPE averages ``|y - yhat| / |y|`` over samples with ``|y| > 1e-6`` only
    (NaN if none qualify), since throughput can be exactly zero.

    Raises
    ------
    ValueError
        On length mismatch or empty input.
    UndefinedMetricError
        When ``y_true`` is constant, so R² has no denominator.
    """
    y = np.asarray(y_true, dtype=float).ravel()
    p = np.asarray(y_pred, dtype=float).ravel()
    if y.size != p.size:
        raise ValueError(f"length mismatch: {y.size} targets vs {p.size} predictions")
    if y.size == 0:
        raise ValueError("metrics need at least one sample")
    err = y - p
    a = np.abs(err)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("r2 is undefined for constant y_true")
    ok = np.abs(y) > MAPE_EPS
    mape = float(np.mean(a[ok] / np.abs(y[ok]))) if ok.any() else float("nan")
    return MetricReport(
        mae=float(a.mean()),
        mape=mape,
        medae=float(np.median(a)),
        rmse=float(math.sqrt(np.mean(err * err))),
        r2=1.0 - float(np.sum(err * err)) / ss_tot,
    )


# --------------------------------------------------------------------------
# sampling-period degradation


def degrade_run(run, period_s: float):
    """Features as a logger with period ``period_s`` would have delivered them.

    Numeric feature columns are block-averaged and held (forward-filled)
    back onto the native grid; identifier columns keep each block's first
    value. Time stamps and throughput targets stay at the native rate.
    """
    M = int(round(period_s / run.sample_period))
    if M < 1 or not math.isclose(M * run.sample_period, period_s, rel_tol=1e-6):
        raise ValueError(f"period {period_s}s is not a multiple of the native {run.sample_period}s")
    if M == 1:
        return run
    f = run.frame.copy()
    K = len(f)
    first = np.arange(0, K, M)
    hold = np.repeat(first, M)[:K]
    for c in f.columns:
        if c in _NATIVE_COLUMNS:
            continue
        if c in _HELD_COLUMNS:
            f[c] = f[c].to_numpy()[hold]
        else:
            f[c] = reconstruct(downsample(f[c].to_numpy(dtype=float), M), M, K)
    return run.with_frame(f)


# --------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    """Axes of an experiment grid.

    ``regimes`` lists (train_env, test_env) pairs; ``"all"`` means every
    environment. ``horizons_s`` entries of 0 mean the instantaneous target.
    ``model_params`` maps a model kind to hyperparameter overrides.
    """

    models: tuple[str, ...] = ("gradient_boosting",)
    scenarios: tuple[str, ...] = ("FULL",)
    splits: tuple[str, ...] = ("folds",)
    periods_s: tuple[float, ...] = (1.0,)
    horizons_s: tuple[float, ...] = (0.0,)
    regimes: tuple[tuple[str, str], ...] = ((ALL_ENVS, ALL_ENVS),)
    directions: tuple[str, ...] = ("dl",)
    model_params: Mapping[str, Mapping] = field(default_factory=dict)
    train_fraction: Mapping[str, float] = field(default_factory=dict)
    rem_resolution_deg: float = DEFAULT_REM_RESOLUTION

    def __post_init__(self):
        for name, axis, allowed in (
            ("models", self.models, KINDS), ("scenarios", self.scenarios, tuple(ACCESS_SCENARIOS)),
            ("splits", self.splits, STRATEGIES), ("directions", self.directions, DIRECTIONS),
        ):
            if not axis:
                raise ValueError(f"grid axis {name!r} is empty")
            for v in axis:
                if v not in allowed:
                    raise ValueError(f"grid axis {name!r}: unknown value {v!r}")
        for pair in self.regimes:
            if len(pair) != 2 or any(e not in (*ENVS, ALL_ENVS) for e in pair):
                raise ValueError(f"grid axis 'regimes': bad pair {pair!r}")
        for p in self.periods_s:
            if not p > 0:
                raise ValueError("grid axis 'periods_s': periods must be positive")
        object.__setattr__(self, "periods_s", tuple(float(p) for p in self.periods_s))
        object.__setattr__(self, "horizons_s", tuple(float(h) for h in self.horizons_s))
        for h in self.horizons_s:
            if h != 0 and h < 1:
                raise ValueError("grid axis 'horizons_s': horizons must be 0 or >= 1 s")
        for k in self.model_params:
            if k not in KINDS:
                raise ValueError(f"model_params: unknown model {k!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid field {sorted(unknown)[0]!r}")
        kw = dict(d)
        for k in ("models", "scenarios", "splits", "directions"):
            if k in kw:
                kw[k] = tuple(kw[k])
        for k in ("periods_s", "horizons_s"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        if "regimes" in kw:
            kw["regimes"] = tuple(tuple(p) for p in kw["regimes"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regimes"] = [list(p) for p in self.regimes]
        d["model_params"] = {k: dict(v) for k, v in self.model_params.items()}
        d["train_fraction"] = dict(self.train_fraction)
        return d

    def cells(self):
        return itertools.product(self.models, self.scenarios, self.splits, self.periods_s, self.horizons_s,
                                 self.regimes, self.directions)


@dataclass(frozen=True)
class GridCell:
    model: str
    scenario: str
    split: str
    period_s: float
    horizon_s: float
    train_env: str
    test_env: str
    direction: str
    report: MetricReport | None = None
    error: str | None = None
    n_train: int = 0
    n_test: int = 0

    @property
    def ok(self) -> bool:
        return self.report is not None

    @property
    def coords(self) -> dict:
        return {
            "model": self.model, "scenario": self.scenario, "split": self.split,
            "period_s": self.period_s, "horizon_s": self.horizon_s, "train_env": self.train_env,
            "test_env": self.test_env, "direction": self.direction,
        }


@dataclass(frozen=True)
class ExperimentGrid:
    spec: GridSpec
    seed: int
    cells: tuple[GridCell, ...]

    def find(self, **coords) -> list[GridCell]:
        return [c for c in self.cells if all(getattr(c, k) == v for k, v in coords.items())]

    def value(self, metric: str, **coords) -> float:
        hits = self.find(**coords)
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match {coords}")
        if hits[0].report is None:
            return float("nan")
        return getattr(hits[0].report, metric)

    def to_long_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LONG_CSV_COLUMNS)
            for c in self.cells:
                vals = c.report.as_dict() if c.report else dict.fromkeys(METRIC_NAMES, float("nan"))
                for m in METRIC_NAMES:
                    w.writerow([c.model, c.scenario, c.split, _num(c.period_s), _num(c.horizon_s), c.train_env,
                                c.test_env, c.direction, m, repr(float(vals[m]))])

    def split_comparisons(self) -> list[dict]:
        """Random-vs-folds MAE ratios, reported both ways (their relative-gain base is ambiguous)."""
        out = []
        for c in self.cells:
            if c.split != "random" or not c.ok:
                continue
            others = self.find(**{**c.coords, "split": "folds"})
            if not others or not others[0].ok:
                continue
            mr, mf = c.report.mae, others[0].report.mae
            out.append({
                **{k: v for k, v in c.coords.items() if k != "split"},
                "mae_random": mr, "mae_folds": mf,
                "random_lower_than_folds": 1.0 - mr / mf if mf else float("nan"),
                "folds_higher_than_random": mf / mr - 1.0 if mr else float("nan"),
            })
        return out

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "n_cells": len(self.cells),
            "n_failed": sum(not c.ok for c in self.cells),
            "cells": [
                {**c.coords, "n_train": c.n_train, "n_test": c.n_test,
                 "metrics": c.report.as_dict() if c.report else None, "error": c.error}
                for c in self.cells
            ],
            "split_comparisons": self.split_comparisons(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(_clean(self.summary()), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def cell_seed(seed: int, *coords) -> int:
    """Stable 32-bit seed from the global seed and cell coordinates."""
    norm = [repr(float(c)) if isinstance(c, (int, float)) and not isinstance(c, bool) else str(c) for c in coords]
    text = "|".join([str(int(seed)), *norm])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def _env_runs(runs, env):
    return list(runs) if env == ALL_ENVS else filter_env(runs, env)


def run_grid(runs: Sequence, grid: GridSpec, seed: int = 0, sites=None) -> ExperimentGrid:
    """Evaluate every cell of ``grid`` on ``runs``; failing cells are recorded, not raised.

    Cross-environment cells split the train environment's runs and the test
    environment's runs with the same seed, train on the former's train side
    and test on the latter's test side. When both environments agree this
    is an ordinary held-out evaluation.
    """
    degraded: dict = {}
    tables: dict = {}
    cells = []
    for model, scenario, strat, period, horizon, (tr_env, te_env), direction in grid.cells():
        coords = (model, scenario, strat, period, horizon, tr_env, te_env, direction)
        try:
            key = (direction, period)
            if key not in degraded:
                base = select_direction(runs, direction)
                if not base:
                    raise ValueError(f"no {direction} runs")
                degraded[key] = [degrade_run(r, period) for r in base]
            pool = degraded[key]
            tkey = (direction, period, horizon, strat, tr_env, te_env, scenario)
            if tkey not in tables:
                data_seed = cell_seed(seed, "split", strat, direction, period)
                tf = grid.train_fraction.get(strat)
                src_tr = _env_runs(pool, tr_env)
                src_te = src_tr if te_env == tr_env else _env_runs(pool, te_env)
                if not src_tr or not src_te:
                    raise ValueError(f"no samples for environment pair ({tr_env}, {te_env})")
                sp_tr = split(src_tr, strat, tf, data_seed)
                sp_te = sp_tr if src_te is src_tr else split(src_te, strat, tf, data_seed)
                rem = build_rem(train_runs_of(src_tr, sp_tr), grid.rem_resolution_deg)
                h = horizon or None
                train, _ = assemble(src_tr, scenario, sp_tr, rem, sites=sites, direction=direction, horizon_s=h)
                _, test = assemble(src_te, scenario, sp_te, rem, sites=sites, direction=direction, horizon_s=h)
                if len(train) == 0 or len(test) == 0:
                    raise ValueError("empty train or test table")
                tables[tkey] = (train, test)
            train, test = tables[tkey]
            spec = ModelSpec(model, dict(grid.model_params.get(model, {})), seed=cell_seed(seed, "model", *coords))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fitted = fit(spec, train)
            rep = metrics(test.y, predict(fitted, test))
            cells.append(GridCell(model, scenario, strat, float(period), float(horizon), tr_env, te_env, direction,
                                  report=rep, n_train=len(train), n_test=len(test)))
        except Exception as exc:  # noqa: BLE001 - recorded per cell, grid continues
            cells.append(GridCell(model, scenario, strat, float(period), float(horizon), tr_env, te_env, direction,
                                  error=f"{type(exc).__name__}: {exc}"))
    return ExperimentGrid(spec=grid, seed=int(seed), cells=tuple(cells))
