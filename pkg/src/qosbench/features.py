"""Feature groups, access scenarios, radio environment maps and learning tables."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

PHY = ("rsrp_dbm", "rsrq_db", "rssi_dbm", "sinr_db", "rsrp_margin_db", "rsrq_margin_db", "t_since_ho_s")
CHAN = ("rank", "cqi")
BS = ("cell_tput_dl_mbps", "cell_tput_ul_mbps", "active_ues", "cell_load")
VEH = ("lat", "lon", "speed_kmh", "dist_to_cell_m")
REM_QUANTITIES = ("rsrp_dbm", "rsrq_db", "rssi_dbm", "sinr_db", "rsrp_margin_db", "rsrq_margin_db",
                  "tput_dl_mbps", "tput_ul_mbps")
REM = tuple(f"rem_{q}" for q in REM_QUANTITIES) + ("rem_miss",)

FEATURE_GROUPS: dict[str, tuple[str, ...]] = {"PHY": PHY, "CHAN": CHAN, "BS": BS, "VEH": VEH, "REM": REM}

ACCESS_SCENARIOS: dict[str, tuple[str, ...]] = {
    "MD": ("PHY",),
    "EMD": ("PHY", "CHAN"),
    "MDNET": ("PHY", "BS"),
    "MDREM": ("PHY", "REM"),
    "EMDNET": ("PHY", "CHAN", "BS"),
    "REMNET": ("PHY", "BS", "REM"),
    "DEVNET": ("PHY", "BS", "VEH"),
    "DEV": ("PHY", "CHAN", "VEH"),
    "FULL": ("PHY", "CHAN", "BS", "VEH", "REM"),
}

DEFAULT_REM_RESOLUTION = 1e-3
EARTH_RADIUS_M = 6_371_008.8


def scenario_columns(scenario: str) -> tuple[str, ...]:
    try:
        groups = ACCESS_SCENARIOS[scenario]
    except KeyError:
        raise KeyError(f"unknown access scenario {scenario!r}") from None
    return tuple(c for g in groups for c in FEATURE_GROUPS[g])


def haversine_m(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


# --------------------------------------------------------------------------
# radio environment map


def _grid_keys(lat, lon, res):
    i = np.floor(np.asarray(lat, dtype=float) / res).astype(np.int64)
    j = np.floor(np.asarray(lon, dtype=float) / res).astype(np.int64)
    return (i << 32) + (j & 0xFFFFFFFF)


@dataclass(frozen=True)
class RadioEnvironmentMap:
    """Per-grid-cell count, mean and std of each mapped quantity."""

    resolution_deg: float
    keys: np.ndarray  # sorted packed (lat index, lon index)
    quantities: tuple[str, ...]
    count: np.ndarray  # (n_cells, n_quantities)
    mean: np.ndarray
    std: np.ndarray
    global_mean: np.ndarray

    def _rows(self, lat, lon):
        k = _grid_keys(lat, lon, self.resolution_deg)
        pos = np.searchsorted(self.keys, k)
        pos_c = np.clip(pos, 0, max(self.keys.size - 1, 0))
        hit = (self.keys.size > 0) & (self.keys[pos_c] == k) if self.keys.size else np.zeros(k.size, bool)
        return pos_c, hit

    def lookup(self, lat, lon, quantity: str, impute: bool = False) -> np.ndarray:
        """Cell mean of ``quantity`` at each position; NaN (or the global mean) where unvisited."""
        q = self.quantities.index(quantity)
        pos, hit = self._rows(lat, lon)
        out = np.full(pos.size, self.global_mean[q] if impute else np.nan)
        if self.keys.size:
            found = hit & (self.count[pos, q] > 0)
            out[found] = self.mean[pos[found], q]
        return out

    def cell_count(self, lat, lon) -> np.ndarray:
        pos, hit = self._rows(lat, lon)
        out = np.zeros(pos.size, dtype=np.int64)
        if self.keys.size:
            out[hit] = self.count[pos[hit]].max(axis=1)
        return out


def build_rem(train_runs: Sequence, resolution_deg: float = DEFAULT_REM_RESOLUTION,
              quantities: Sequence[str] = REM_QUANTITIES) -> RadioEnvironmentMap:
    """Aggregate the training runs into a grid map (a commutative sum/sum-of-squares fold)."""
    frames = [r.frame for r in train_runs if len(r)]
    quantities = tuple(quantities)
    if not frames:
        z = np.zeros((0, len(quantities)))
        return RadioEnvironmentMap(resolution_deg, np.empty(0, np.int64), quantities, z.astype(np.int64),
                                   z, z, np.full(len(quantities), np.nan))
    df = pd.concat([f[["lat", "lon", *quantities]] for f in frames], ignore_index=True)
    key = _grid_keys(df["lat"], df["lon"], resolution_deg)
    vals = df[list(quantities)].to_numpy(dtype=float)
    finite = np.isfinite(vals)
    v0 = np.where(finite, vals, 0.0)
    uniq, inv = np.unique(key, return_inverse=True)
    n_cells, n_q = uniq.size, len(quantities)
    cnt = np.zeros((n_cells, n_q))
    s1 = np.zeros((n_cells, n_q))
    s2 = np.zeros((n_cells, n_q))
    np.add.at(cnt, inv, finite.astype(float))
    np.add.at(s1, inv, v0)
    np.add.at(s2, inv, v0 * v0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, s1 / cnt, np.nan)
        var = np.where(cnt > 0, s2 / cnt - mean**2, np.nan)
    std = np.sqrt(np.clip(var, 0.0, None))
    gmean = np.array([np.nanmean(vals[:, q]) if finite[:, q].any() else np.nan for q in range(n_q)])
    return RadioEnvironmentMap(resolution_deg, uniq, quantities, cnt.astype(np.int64), mean, std, gmean)


# --------------------------------------------------------------------------
# learning tables


@dataclass(frozen=True)
class LearningTable:
    X: pd.DataFrame
    y: np.ndarray
    keys: pd.DataFrame  # run_id, device_id, t_ms
    aux: pd.DataFrame  # lat, lon, env, speed_kmh (never used as features unless selected)
    target: str = ""

    def __len__(self) -> int:
        return len(self.y)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.X.columns)

    def to_csv(self, path) -> None:
        """CSV with a ``# schema:`` comment line naming target and feature columns."""
        body = pd.concat([self.keys.reset_index(drop=True), self.X.reset_index(drop=True)], axis=1)
        body["target"] = self.y
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema: target={self.target}; features={','.join(self.columns)}\n")
            body.to_csv(fh, index=False, lineterminator="\n")


def horizon_indices(n: int, period: float, window_s: float) -> tuple[int, np.ndarray]:
    if window_s < 1:
        raise ValueError("window_s must be >= 1")
    k = int(math.ceil(window_s / period - 1e-9))
    return k, np.arange(max(0, n - k))


def horizon_target(run, direction: str, window_s: float) -> np.ndarray:
    """Mean throughput over the next ``window_s`` seconds, ``(t, t + window_s]``.

    The last ``ceil(window_s / period)`` samples have no complete window and
    are dropped, so the result is that much shorter than the run.
    """
    y = run.frame[f"tput_{direction}_mbps"].to_numpy(dtype=float)
    k, keep = horizon_indices(y.size, run.sample_period, window_s)
    if keep.size == 0:
        warnings.warn(f"horizon window {window_s}s longer than run {run.run_id}", RuntimeWarning, stacklevel=2)
        return np.empty(0)
    c = np.r_[0.0, np.cumsum(y)]
    return (c[keep + k + 1] - c[keep + 1]) / k


def _run_rows(run, direction, horizon_s, sites, need_dist):
    f = run.frame
    n = len(f)
    if horizon_s:
        y = horizon_target(run, direction, horizon_s)
        keep = np.arange(y.size)
    else:
        y = f[f"tput_{direction}_mbps"].to_numpy(dtype=float)
        keep = np.arange(n)
    cols = f.iloc[keep]
    base = cols.drop(columns=["tput_dl_mbps", "tput_ul_mbps"]).reset_index(drop=True)
    if need_dist:
        if sites is None:
            raise ValueError("VEH features need cell-site positions (sites) to compute dist_to_cell_m")
        ids = base["cell_id"].to_numpy()
        missing = set(np.unique(ids)) - set(sites)
        if missing:
            raise KeyError(f"cell site position missing for cell_id {sorted(missing)[0]}")
        slat = np.array([sites[c][0] for c in ids], dtype=float)
        slon = np.array([sites[c][1] for c in ids], dtype=float)
        base["dist_to_cell_m"] = haversine_m(base["lat"].to_numpy(), base["lon"].to_numpy(), slat, slon)
    return base, y, keep


def _rem_columns(base, rem):
    lat, lon = base["lat"].to_numpy(dtype=float), base["lon"].to_numpy(dtype=float)
    for q in REM_QUANTITIES:
        base[f"rem_{q}"] = rem.lookup(lat, lon, q, impute=True)
    base["rem_miss"] = (rem.cell_count(lat, lon) == 0).astype(float)


def _table(runs, masks, want, direction, horizon_s, sites, rem, scenario_cols, rem_by_run=None):
    parts, ys, keys = [], [], []
    need_dist = "dist_to_cell_m" in scenario_cols
    for run, mask in zip(runs, masks):
        base, y, keep = _run_rows(run, direction, horizon_s, sites, need_dist)
        sel = mask[keep] == want
        if not sel.any():
            continue
        b = base[sel].reset_index(drop=True)
        parts.append(b)
        ys.append(y[sel])
        keys.append(pd.DataFrame({"run_id": run.run_id, "device_id": run.device_id, "t_ms": b["t_ms"].to_numpy()}))
    if parts:
        base = pd.concat(parts, ignore_index=True)
        y = np.concatenate(ys)
        key = pd.concat(keys, ignore_index=True)
    else:
        base = pd.DataFrame(columns=["lat", "lon", "env", "speed_kmh", "dist_to_cell_m", *PHY, *CHAN, *BS])
        y = np.empty(0)
        key = pd.DataFrame(columns=["run_id", "device_id", "t_ms"])
    if any(c.startswith("rem_") for c in scenario_cols):
        if rem_by_run is None or len(base) == 0:
            _rem_columns(base, rem)
        else:
            # each training row sees the map of the other drives only
            pieces = []
            for rid, idx in base.groupby(key["run_id"].to_numpy(), sort=False).indices.items():
                part = base.iloc[idx].copy()
                _rem_columns(part, rem_by_run[rid])
                pieces.append(part)
            base = pd.concat(pieces).sort_index()
    X = base[list(scenario_cols)].astype(float).reset_index(drop=True)
    aux = base[["lat", "lon", "env", "speed_kmh"]].reset_index(drop=True)
    return LearningTable(X=X, y=y, keys=key, aux=aux, target=f"tput_{direction}_mbps")


def assemble(runs: Sequence, scenario: str, split, rem: RadioEnvironmentMap | None = None,
             sites: Mapping[int, tuple[float, float]] | None = None, direction: str | None = None,
             horizon_s: float | None = None, leave_run_out: bool = True) -> tuple[LearningTable, LearningTable]:
    """Build train and test tables for one access scenario.

    ``split`` is a :class:`~qosbench.splits.SplitAssignment` over ``runs``.
    REM scenarios need a map built from the train side of that same split.
    Test rows look the map up directly. With ``leave_run_out`` each training
    row instead uses a map rebuilt without its own drive, because a map that
    contains the row's own throughput leaks the target into the features.
    """
    cols = scenario_columns(scenario)
    if "REM" in ACCESS_SCENARIOS[scenario] and rem is None:
        raise ValueError(f"scenario {scenario} needs a radio environment map but none was given")
    if direction is None:
        dirs = {r.direction for r in runs}
        if len(dirs) != 1:
            raise ValueError("runs mix directions; pass direction explicitly")
        direction = dirs.pop()
    masks = split.masks
    if len(masks) != len(runs):
        raise ValueError("split does not match the given runs")
    rem_by_run = None
    if rem is not None and "REM" in ACCESS_SCENARIOS[scenario] and leave_run_out:
        train_side = train_runs_of(runs, split)
        rem_by_run = {}
        for rid in {r.run_id for r in train_side}:
            m = build_rem([r for r in train_side if r.run_id != rid], rem.resolution_deg, rem.quantities)
            # a lone drive has no other drives to map: fall back to the full map's global means
            g = np.where(np.isfinite(m.global_mean), m.global_mean, rem.global_mean)
            rem_by_run[rid] = replace(m, global_mean=g)
    train = _table(runs, masks, True, direction, horizon_s, sites, rem, cols, rem_by_run)
    test = _table(runs, masks, False, direction, horizon_s, sites, rem, cols)
    return train, test


def train_runs_of(runs: Sequence, split) -> list:
    """The train-side part of every run, for building leakage-free maps."""
    out = []
    for r, m in zip(runs, split.masks):
        if m.any():
            out.append(r.with_frame(r.frame[m]))
    return out
