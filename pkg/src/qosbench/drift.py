"""Page-Hinkley change detection with reset-on-alarm.

The cumulative statistic uses the running mean of the samples seen since
the last reset, ``U_t = sum_{i<=t} (x_i - mean_i - delta)``; an alarm is
raised when ``U_t - min_{i<=t} U_i`` exceeds ``lambda_``. That detects an
increase of the stream mean. With ``two_sided`` the mirrored statistic
``max U' - U'`` (using ``+delta``) detects decreases as well.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .stationarity import DegenerateInputError

DEFAULT_LAMBDA_FACTOR = 10.0
# regime experiment: an environment change may move the stream either way,
# and thresholds tied to the training spread need a shorter run-length
REGIME_FEATURE = "rsrp_dbm"
REGIME_LAMBDA_FACTOR = 5.0


@dataclass(frozen=True)
class PhConfig:
    delta: float
    lambda_: float | None = None
    two_sided: bool = False

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.lambda_ is None:
            object.__setattr__(self, "lambda_", DEFAULT_LAMBDA_FACTOR * self.delta)
        if not self.lambda_ > 0:
            raise ValueError("lambda must be > 0")


@dataclass(frozen=True)
class PhState:
    n: int = 0
    mean: float = 0.0
    u: float = 0.0
    m: float = 0.0
    # mirrored side, only advanced when two_sided
    u_neg: float = 0.0
    m_neg: float = 0.0

    @property
    def ph(self) -> float:
        return self.u - self.m

    @property
    def ph_neg(self) -> float:
        return self.m_neg - self.u_neg


@dataclass(frozen=True)
class DriftLog:
    alarm_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    ph_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return int(self.alarm_indices.size)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alarm_index", "ph_value"])
            for i, v in zip(self.alarm_indices, self.ph_values):
                w.writerow([int(i), repr(float(v))])


def ph_step(state: PhState, x_t: float, config: PhConfig) -> tuple[PhState, bool, float]:
    """Advance the detector by one sample.

    Returns the new state, the alarm flag and the PH value that was compared
    against the threshold. On alarm the returned state is the fresh initial
    state.
    """
    x_t = float(x_t)
    if not math.isfinite(x_t):
        raise ValueError(f"non-finite sample {x_t!r}")
    n = state.n + 1
    mean = state.mean + (x_t - state.mean) / n
    u = state.u + (x_t - mean - config.delta)
    m = min(state.m, u)
    ph = u - m
    u_neg, m_neg, ph_neg = state.u_neg, state.m_neg, 0.0
    if config.two_sided:
        u_neg = state.u_neg + (x_t - mean + config.delta)
        m_neg = max(state.m_neg, u_neg)
        ph_neg = m_neg - u_neg
    value = max(ph, ph_neg)
    if value > config.lambda_:
        return PhState(), True, value
    return PhState(n=n, mean=mean, u=u, m=m, u_neg=u_neg, m_neg=m_neg), False, value


def detect_drifts(stream: Iterable[float], config: PhConfig) -> DriftLog:
    state = PhState()
    idx, vals = [], []
    for i, x in enumerate(stream):
        state, alarm, value = ph_step(state, x, config)
        if alarm:
            idx.append(i)
            vals.append(value)
    return DriftLog(np.asarray(idx, dtype=int), np.asarray(vals, dtype=float))


def _feature_stream(runs: Sequence, feature: str) -> np.ndarray:
    parts = [r.frame[feature].to_numpy(dtype=float) for r in runs]
    return np.concatenate(parts) if parts else np.empty(0)


def regime_drift_count(
    train_runs: Sequence,
    test_runs: Sequence,
    feature: str = REGIME_FEATURE,
    sigma_multiplier: float = 2.0,
    lambda_factor: float = REGIME_LAMBDA_FACTOR,
    two_sided: bool = True,
) -> int:
    """Alarms on the concatenated test stream with ``delta`` tied to the training spread.

    ``delta = sigma_multiplier * std(train feature)`` and
    ``lambda = lambda_factor * delta``.
    """
    if not train_runs:
        raise ValueError("train_runs is empty")
    sigma = float(np.std(_feature_stream(train_runs, feature)))
    if sigma == 0.0:
        raise DegenerateInputError(f"training std of {feature!r} is zero")
    delta = sigma_multiplier * sigma
    cfg = PhConfig(delta=delta, lambda_=lambda_factor * delta, two_sided=two_sided)
    return len(detect_drifts(_feature_stream(test_runs, feature), cfg))


def write_drift_table(path, rows: Iterable[dict]) -> None:
    """Write the regime experiment table: one row per (training region, multiplier, test region)."""
    rows = list(rows)
    cols = ["train_env", "sigma_multiplier", "test_env", "drifts"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})

