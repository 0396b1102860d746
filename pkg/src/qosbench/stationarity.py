"""Augmented Dickey-Fuller testing, prefix-accumulated p-values and the ACF."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_LENGTH = 15

# MacKinnon (1994) response surface, constant-only regression, one I(1) series.
_TAU_MAX = 2.74
_TAU_MIN = -18.83
_TAU_STAR = -1.61
_SMALLP = (2.1659, 1.4412, 3.8269e-2)
_LARGEP = (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2)


class DegenerateInputError(ValueError):
    """Raised for zero-variance input where a statistic is undefined."""


class SeriesTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    p_value: float
    lag_order: int
    n_obs: int


@dataclass(frozen=True)
class AccumulatedAdf:
    t: np.ndarray  # prefix end index (inclusive) of each tested prefix
    p_values: np.ndarray  # NaN where the prefix was too short or degenerate

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "p_value"])
            for t, p in zip(self.t, self.p_values):
                w.writerow([int(t), "" if np.isnan(p) else repr(float(p))])


def mackinnon_pvalue(stat: float) -> float:
    if stat > _TAU_MAX:
        return 1.0
    if stat < _TAU_MIN:
        return 0.0
    coef = _SMALLP if stat <= _TAU_STAR else _LARGEP
    z = sum(c * stat**i for i, c in enumerate(coef))
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def default_max_lag(n: int) -> int:
    """Schwert's rule ``floor(12 (n/100)^(1/4))``, capped so the regression stays identified."""
    return max(0, min(int(math.floor(12.0 * (n / 100.0) ** 0.25)), n // 2 - 2))


def _design(x: np.ndarray, dx: np.ndarray, lag: int, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    # The last n_rows differences are the response; regressors are the
    # constant, the lagged level and `lag` lagged differences.
    T = dx.size
    rows = np.arange(T - n_rows, T)
    cols = [np.ones(n_rows), x[rows]]
    for i in range(1, lag + 1):
        cols.append(dx[rows - i])
    return np.column_stack(cols), dx[rows]


def _ols(X: np.ndarray, y: np.ndarray):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    return beta, ssr


def _aic(ssr: float, n: int, k: int) -> float:
    if ssr <= 0.0:
        return -np.inf
    llf = -0.5 * n * (math.log(2 * math.pi) + math.log(ssr / n) + 1.0)
    return -2.0 * llf + 2.0 * k


def adf_test(x, max_lag: int | None = None) -> AdfResult:
    """ADF unit-root test with a constant and AIC lag selection.

    All candidate lags are compared on a common estimation sample (the one
    available at ``max_lag``); the chosen lag is then re-estimated on every
    observation it allows. The p-value comes from MacKinnon's approximate
    response surface.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < MIN_LENGTH:
        raise SeriesTooShortError(f"series of length {n} is shorter than {MIN_LENGTH}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.ptp(x) == 0.0:
        raise DegenerateInputError("series is constant")
    if max_lag is None:
        max_lag = default_max_lag(n)
    if max_lag < 0 or n < max_lag + 10 or max_lag > n // 2 - 2:
        raise SeriesTooShortError(f"max_lag={max_lag} too large for a series of length {n}")

    dx = np.diff(x)
    # dx[j] = x[j+1] - x[j]; the lagged level for response dx[j] is x[j].
    x_level = x[:-1]
    common = dx.size - max_lag
    best_lag, best_ic = 0, np.inf
    for lag in range(max_lag + 1):
        X, y = _design(x_level, dx, lag, common)
        _, ssr = _ols(X, y)
        ic = _aic(ssr, common, X.shape[1])
        if ic < best_ic:
            best_ic, best_lag = ic, lag

    n_rows = dx.size - best_lag
    X, y = _design(x_level, dx, best_lag, n_rows)
    beta, ssr = _ols(X, y)
    dof = n_rows - X.shape[1]
    if dof <= 0 or ssr <= 0.0:
        raise DegenerateInputError("regression has no residual variance")
    sigma2 = ssr / dof
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    stat = float(beta[1] / math.sqrt(cov[1, 1]))
    return AdfResult(statistic=stat, p_value=mackinnon_pvalue(stat), lag_order=best_lag, n_obs=n_rows)


def accumulated_adf(x, stride: int = 10, max_lag: int | None = None) -> AccumulatedAdf:
    """p-value of the ADF test on every ``stride``-th prefix ``x[0..t]``.

    Prefixes that are too short or degenerate yield NaN instead of raising.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = np.asarray(x, dtype=float)
    ts = np.arange(0, x.size, stride)
    p = np.full(ts.size, np.nan)
    for i, t in enumerate(ts):
        prefix = x[: t + 1]
        if prefix.size < MIN_LENGTH:
            continue
        try:
            p[i] = adf_test(prefix, max_lag=max_lag).p_value
        except (SeriesTooShortError, DegenerateInputError, np.linalg.LinAlgError):
            pass
    return AccumulatedAdf(t=ts, p_values=p)


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Sample ACF for lags ``0..max_lag`` (biased autocovariance over the sample variance)."""
    x = np.asarray(x, dtype=float)
    if max_lag < 0 or x.size <= max_lag:
        raise ValueError(f"need len(x) > max_lag, got {x.size} and {max_lag}")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise DegenerateInputError("series has zero variance")
    n = x.size
    return np.array([float(xc[: n - k] @ xc[k:]) / denom for k in range(max_lag + 1)])
