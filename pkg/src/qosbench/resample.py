"""Averaging downsample, forward-fill reconstruction and the resulting error.

A series ``x_o`` of length ``K`` is reduced by block averaging with ratio
``M`` and then held piecewise-constant back onto the original grid. The
difference between the original and the held series is the reconstruction
error, which is then aggregated per 5 km/h speed bin.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPEED_BIN_WIDTH = 5.0
SPEED_MAX = 140.0


@dataclass(frozen=True)
class ResampleResult:
    M: int
    x_o: np.ndarray
    x_ds: np.ndarray
    x_rs: np.ndarray
    re: np.ndarray


@dataclass(frozen=True)
class SpeedBinnedError:
    bin_edges: np.ndarray
    mae_per_bin: np.ndarray  # NaN where the bin is empty
    iqr_per_bin: np.ndarray  # shape (n_bins, 2): 25th and 75th percentile of |RE|
    count_per_bin: np.ndarray

    @property
    def bin_lo(self) -> np.ndarray:
        return self.bin_edges[:-1]


def _check_ratio(M) -> int:
    if int(M) != M or M < 1:
        raise ValueError(f"downsampling ratio M must be an integer >= 1, got {M!r}")
    return int(M)


def downsample(x_o: Sequence[float], M: int) -> np.ndarray:
    """Block means of ``x_o`` over consecutive blocks of ``M`` samples.

    A trailing partial block is averaged over its actual length.
    """
    M = _check_ratio(M)
    x = np.asarray(x_o, dtype=float)
    if x.size == 0:
        raise ValueError("cannot downsample an empty series")
    starts = np.arange(0, x.size, M)
    sums = np.add.reduceat(x, starts)
    lengths = np.minimum(M, x.size - starts)
    return sums / lengths


def reconstruct(x_ds: Sequence[float], M: int, K: int) -> np.ndarray:
    """Forward-fill ``x_ds`` back to length ``K``: ``x_rs[k] = x_ds[k // M]``."""
    M = _check_ratio(M)
    x_ds = np.asarray(x_ds, dtype=float)
    expected = -(-K // M)
    if K < 1 or x_ds.size != expected:
        raise ValueError(
            f"inconsistent lengths: len(x_ds)={x_ds.size}, M={M}, K={K} "
            f"(expected len(x_ds) == ceil(K/M) == {expected})"
        )
    return x_ds[np.arange(K) // M]


def block_deviation(x_o: Sequence[float], M: int) -> np.ndarray:
    """Closed-form error: each sample minus the mean of its own block.

    Written as the explicit double sum over the block members so it stays
    independent of :func:`downsample`.
    """
    M = _check_ratio(M)
    x = np.asarray(x_o, dtype=float)
    K = x.size
    out = np.empty(K)
    for k in range(K):
        base = k - (k % M)
        members = [m + base for m in range(M) if m + base < K]
        out[k] = sum(x[k] - x[j] for j in members) / len(members)
    return out


def reconstruction_error(x_o: Sequence[float], M: int, check: bool = True) -> ResampleResult:
    """Downsample, forward-fill and subtract.

    With ``check`` the result is verified against :func:`block_deviation`
    to 1e-12; turn it off for long series where the O(K*M) loop matters.
    """
    x = np.asarray(x_o, dtype=float)
    x_ds = downsample(x, M)
    x_rs = reconstruct(x_ds, M, x.size)
    re = x - x_rs
    if check:
        closed = block_deviation(x, M)
        scale = max(1.0, float(np.max(np.abs(x))))
        if not np.allclose(re, closed, rtol=0.0, atol=1e-12 * scale):
            raise ArithmeticError("reconstruction error disagrees with the block-mean closed form")
    return ResampleResult(M=int(M), x_o=x, x_ds=x_ds, x_rs=x_rs, re=re)


def bin_abs_error(speed: np.ndarray, abs_err: np.ndarray) -> SpeedBinnedError:
    """Aggregate ``|RE|`` into 5 km/h speed bins over [0, 140)."""
    edges = np.arange(0.0, SPEED_MAX + SPEED_BIN_WIDTH, SPEED_BIN_WIDTH)
    n_bins = edges.size - 1
    speed = np.asarray(speed, dtype=float)
    abs_err = np.asarray(abs_err, dtype=float)
    idx = np.floor(speed / SPEED_BIN_WIDTH).astype(int)
    ok = (speed >= 0) & (speed < SPEED_MAX) & np.isfinite(abs_err)
    mae = np.full(n_bins, np.nan)
    iqr = np.full((n_bins, 2), np.nan)
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        vals = abs_err[ok & (idx == b)]
        counts[b] = vals.size
        if vals.size:
            mae[b] = vals.mean()
            iqr[b] = np.percentile(vals, [25, 75])
    return SpeedBinnedError(bin_edges=edges, mae_per_bin=mae, iqr_per_bin=iqr, count_per_bin=counts)


def speed_binned_mae(runs: Iterable, feature: str, M: int) -> SpeedBinnedError:
    """Per-speed-bin mean absolute reconstruction error of ``feature``.

    The error is computed per run (blocks never straddle two runs) and the
    bin mean divides by the bin's own sample count.
    """
    speeds, errs = [], []
    for run in runs:
        x = run.frame[feature].to_numpy(dtype=float)
        if x.size == 0:
            continue
        res = reconstruction_error(x, M, check=False)
        speeds.append(run.frame["speed_kmh"].to_numpy(dtype=float))
        errs.append(np.abs(res.re))
    if not speeds:
        return bin_abs_error(np.empty(0), np.empty(0))
    return bin_abs_error(np.concatenate(speeds), np.concatenate(errs))


def write_binned_csv(path, rows: Iterable[tuple[str, int, SpeedBinnedError]]) -> None:
    """Write ``feature,M,bin_lo_kmh,mae,p25,p75,count`` rows; empty bins get blank cells."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "M", "bin_lo_kmh", "mae", "p25", "p75", "count"])
        for feature, M, res in rows:
            for b, lo in enumerate(res.bin_lo):
                n = int(res.count_per_bin[b])
                cells = ["", "", ""] if n == 0 else [
                    repr(float(res.mae_per_bin[b])),
                    repr(float(res.iqr_per_bin[b, 0])),
                    repr(float(res.iqr_per_bin[b, 1])),
                ]
                w.writerow([feature, M, f"{lo:g}", *cells, n])
