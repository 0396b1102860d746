"""Synthetic vehicular LTE traces, trace CSV I/O and preprocessing.

A run is one drive along a shared road whose sections follow the regime
schedule (suburban, highway, rural, ...). Radio features are Gauss-Markov
processes around section-dependent means whose step correlation shrinks
with vehicle speed. Device throughput is a capped share of a logistic
spectral-efficiency curve: the share falls with cell load and with the
number of other active users, so load and SINR are both needed to explain
throughput.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from numba import njit

ENVS = ("highway", "suburban", "rural")
DIRECTIONS = ("dl", "ul")
GRADES = ("dme", "ce")
TPUT_CAP = {"dl": 70.0, "ul": 23.0}

RUN_COLUMNS = ["run_id", "device_id", "device_grade", "direction"]
SAMPLE_COLUMNS = [
    "t_ms", "lat", "lon", "speed_kmh", "env",
    "rsrp_dbm", "rsrq_db", "rssi_dbm", "sinr_db", "cqi", "rank",
    "rsrp_margin_db", "rsrq_margin_db", "t_since_ho_s", "cell_id",
    "cell_load", "active_ues", "cell_tput_dl_mbps", "cell_tput_ul_mbps",
    "tput_dl_mbps", "tput_ul_mbps", "protocol",
]
CSV_COLUMNS = RUN_COLUMNS + SAMPLE_COLUMNS
INT_COLUMNS = ("t_ms", "cqi", "rank", "cell_id", "active_ues")
STR_COLUMNS = ("env", "protocol")
TARGET_COLUMNS = ("tput_dl_mbps", "tput_ul_mbps")
# Gauss-Markov driven radio features; sinr additionally tracks rsrp.
AR_FEATURES = ("rsrp_dbm", "rsrq_db", "rssi_dbm", "sinr_db", "rsrp_margin_db", "rsrq_margin_db")
MEASUREMENT_DB_FEATURES = AR_FEATURES

_LAT0, _LON0 = 49.38, 11.18
_M_PER_DEG = 111_320.0


class SchemaError(ValueError):
    pass


class OrderingError(ValueError):
    pass


# --------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class RadioSample:
    t: int
    lat: float
    lon: float
    speed: float
    env: str
    rsrp: float
    rsrq: float
    rssi: float
    sinr: float
    cqi: int
    rank: int
    rsrp_margin: float
    rsrq_margin: float
    t_since_ho: float
    cell_id: int
    cell_load: float
    active_ues: int
    cell_tput_dl: float
    cell_tput_ul: float
    tput_dl: float
    tput_ul: float
    protocol: str


@dataclass(frozen=True, eq=False)
class MeasurementRun:
    """One device's trace over one drive.

    ``frame`` holds the per-sample columns (``SAMPLE_COLUMNS``) in time
    order. Treat it as read-only; helpers here always return new runs.
    """

    run_id: str
    device_id: str
    device_grade: str
    direction: str
    sample_period: float
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def key(self) -> tuple[str, str]:
        return (self.run_id, self.device_id)

    def with_frame(self, frame: pd.DataFrame) -> "MeasurementRun":
        return replace(self, frame=frame.reset_index(drop=True))

    def samples(self) -> Iterator[RadioSample]:
        f = self.frame
        for row in f.itertuples(index=False):
            yield RadioSample(
                t=int(row.t_ms), lat=row.lat, lon=row.lon, speed=row.speed_kmh, env=row.env,
                rsrp=row.rsrp_dbm, rsrq=row.rsrq_db, rssi=row.rssi_dbm, sinr=row.sinr_db,
                cqi=int(row.cqi), rank=int(row.rank), rsrp_margin=row.rsrp_margin_db,
                rsrq_margin=row.rsrq_margin_db, t_since_ho=row.t_since_ho_s,
                cell_id=int(row.cell_id), cell_load=row.cell_load, active_ues=int(row.active_ues),
                cell_tput_dl=row.cell_tput_dl_mbps, cell_tput_ul=row.cell_tput_ul_mbps,
                tput_dl=row.tput_dl_mbps, tput_ul=row.tput_ul_mbps, protocol=row.protocol,
            )


# --------------------------------------------------------------------------
# configuration


@dataclass
class EnvProfile:
    """Section-level parameters of one radio environment."""

    means: dict[str, float]
    sigma_scale: float = 1.0
    speed_kmh: float = 50.0
    speed_sigma: float = 10.0
    load_logit: float = 0.0
    max_ues: int = 3
    efficiency: float = 1.0
    site_spacing_m: float = 1000.0


def _default_profiles() -> dict[str, EnvProfile]:
    return {
        "suburban": EnvProfile(
            means={"rsrp_dbm": -88.0, "rsrq_db": -10.0, "rssi_dbm": -60.0, "sinr_db": 14.0,
                   "rsrp_margin_db": 6.0, "rsrq_margin_db": 3.0},
            sigma_scale=1.0, speed_kmh=40.0, speed_sigma=10.0, load_logit=0.0, max_ues=2,
            efficiency=1.0, site_spacing_m=900.0,
        ),
        "highway": EnvProfile(
            means={"rsrp_dbm": -96.0, "rsrq_db": -12.0, "rssi_dbm": -68.0, "sinr_db": 9.0,
                   "rsrp_margin_db": 4.0, "rsrq_margin_db": 2.0},
            sigma_scale=1.6, speed_kmh=115.0, speed_sigma=12.0, load_logit=-1.0, max_ues=2,
            efficiency=0.45, site_spacing_m=2500.0,
        ),
        "rural": EnvProfile(
            means={"rsrp_dbm": -102.0, "rsrq_db": -11.0, "rssi_dbm": -72.0, "sinr_db": 7.0,
                   "rsrp_margin_db": 8.0, "rsrq_margin_db": 4.0},
            sigma_scale=1.2, speed_kmh=75.0, speed_sigma=10.0, load_logit=-0.5, max_ues=2,
            efficiency=0.8, site_spacing_m=3000.0,
        ),
    }


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_runs: int = 6
    run_duration: float = 3300.0
    sample_period: float = 1.0
    directions: tuple[str, ...] = DIRECTIONS
    device_grade: str = "dme"
    ce_noise_db: float = 1.5
    ce_sample_period: float = 1.0
    regime_schedule: tuple[tuple[str, float], ...] = (
        ("suburban", 900.0), ("highway", 1500.0), ("rural", 600.0),
    )
    # step correlation per second at the reference speed
    ar_coefficient: dict[str, float] = field(default_factory=lambda: {
        "rsrp_dbm": 0.97, "rsrq_db": 0.90, "rssi_dbm": 0.95, "sinr_db": 0.92,
        "rsrp_margin_db": 0.95, "rsrq_margin_db": 0.93,
    })
    # stationary std of each feature's own component, dB
    noise_sigma: dict[str, float] = field(default_factory=lambda: {
        "rsrp_dbm": 6.0, "rsrq_db": 2.0, "rssi_dbm": 5.0, "sinr_db": 4.0,
        "rsrp_margin_db": 3.0, "rsrq_margin_db": 1.5,
    })
    sinr_rsrp_coupling: float = 0.4
    ref_speed_kmh: float = 50.0
    min_decorrelation_speed_kmh: float = 5.0
    # cell load: logit-Gauss-Markov, redrawn at handover
    load_ar: float = 0.92
    load_sigma: float = 2.0
    ues_change_rate: float = 0.01
    # rate of the exponential draw of extra UEs at handover; larger means more often alone
    ues_decay: float = 1.8
    # multiplicative spread of the aggregate cell throughput around load x capacity
    cell_tput_noise: float = 0.5
    # unobserved multiplicative throughput factors
    latent_ar: float = 0.995
    latent_sigma: float = 0.15
    run_sigma: float = 0.1
    tput_noise: float = 0.06
    park_duration: float = 120.0
    tcp_duration: float = 60.0
    env_profiles: dict[str, EnvProfile] = field(default_factory=_default_profiles)

    def validate(self) -> None:
        if not self.regime_schedule:
            raise ValueError("regime_schedule is empty")
        for env, dur in self.regime_schedule:
            if env not in self.env_profiles:
                raise ValueError(f"regime_schedule: unknown environment {env!r}")
            if not dur > 0:
                raise ValueError(f"regime_schedule: non-positive duration {dur!r} for {env!r}")
        if not self.run_duration > 0:
            raise ValueError("run_duration must be positive")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.device_grade not in GRADES:
            raise ValueError(f"device_grade must be one of {GRADES}")
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ValueError(f"unknown direction {d!r}")
        if self.park_duration < 0 or self.tcp_duration < 0:
            raise ValueError("park_duration and tcp_duration must be >= 0")

    @property
    def period(self) -> float:
        return self.ce_sample_period if self.device_grade == "ce" else self.sample_period

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime_schedule"] = [list(s) for s in self.regime_schedule]
        d["directions"] = list(self.directions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GeneratorConfig field {sorted(unknown)[0]!r}")
        kw = dict(d)
        if "regime_schedule" in kw:
            kw["regime_schedule"] = tuple((str(e), float(t)) for e, t in kw["regime_schedule"])
        if "directions" in kw:
            kw["directions"] = tuple(kw["directions"])
        if "env_profiles" in kw:
            base = _default_profiles()
            profiles = dict(base)
            for name, p in kw["env_profiles"].items():
                if isinstance(p, EnvProfile):
                    profiles[name] = p
                    continue
                start = asdict(base[name]) if name in base else {"means": {}}
                start.update(p)
                profiles[name] = EnvProfile(**start)
            kw["env_profiles"] = profiles
        for name in ("ar_coefficient", "noise_sigma"):
            if name in kw:
                merged = getattr(cls(), name)
                merged.update(kw[name])
                kw[name] = merged
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# road and cell layout


@dataclass(frozen=True)
class RoadLayout:
    s: np.ndarray  # arc-length of polyline vertices, m
    lat: np.ndarray
    lon: np.ndarray
    section_end: np.ndarray  # arc-length where each schedule section ends
    section_env: tuple[str, ...]
    site_s: np.ndarray  # arc-length position of each cell site
    site_ids: np.ndarray
    site_lat: np.ndarray
    site_lon: np.ndarray

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def env_at(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.section_end, s, side="right")
        idx = np.minimum(idx, len(self.section_env) - 1)
        return idx

    def position(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.interp(s, self.s, self.lat), np.interp(s, self.s, self.lon)

    def serving_cell(self, s: np.ndarray) -> np.ndarray:
        # nearest site along the road
        j = np.searchsorted(self.site_s, s)
        j0 = np.clip(j - 1, 0, self.site_s.size - 1)
        j1 = np.clip(j, 0, self.site_s.size - 1)
        pick = np.where(np.abs(self.site_s[j1] - s) < np.abs(self.site_s[j0] - s), j1, j0)
        return pick

    def cell_sites(self) -> dict[int, tuple[float, float]]:
        return {int(c): (float(a), float(b)) for c, a, b in zip(self.site_ids, self.site_lat, self.site_lon)}


def road_layout(config: GeneratorConfig) -> RoadLayout:
    """Deterministic road polyline and cell sites for a configuration."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7001]))
    step = 25.0
    xs, ys, ss = [0.0], [0.0], [0.0]
    heading = rng.uniform(0, 2 * math.pi)
    section_end, section_env = [], []
    site_s, site_xy = [], []
    total = 0.0
    side = 1.0
    for env, dur in config.regime_schedule:
        prof = config.env_profiles[env]
        length = dur * prof.speed_kmh / 3.6
        n_steps = max(1, int(round(length / step)))
        seg_start = total
        for _ in range(n_steps):
            heading += rng.normal(0.0, 0.02)
            xs.append(xs[-1] + step * math.cos(heading))
            ys.append(ys[-1] + step * math.sin(heading))
            total += step
            ss.append(total)
        section_end.append(total)
        section_env.append(env)
        spacing = prof.site_spacing_m
        pos = seg_start + spacing / 2
        while pos < total:
            site_s.append(pos)
            side = -side
            site_xy.append((pos, side))
            pos += spacing
    s = np.asarray(ss)
    x = np.asarray(xs)
    y = np.asarray(ys)
    lat = _LAT0 + y / _M_PER_DEG
    lon = _LON0 + x / (_M_PER_DEG * math.cos(math.radians(_LAT0)))
    if not site_s:
        site_s.append(total / 2)
        site_xy.append((total / 2, 1.0))
    site_s_arr = np.asarray(site_s)
    # sites sit 300 m off the road, alternating sides
    sx = np.interp(site_s_arr, s, x)
    sy = np.interp(site_s_arr, s, y)
    dx = np.gradient(x, s)
    dy = np.gradient(y, s)
    nx = -np.interp(site_s_arr, s, dy)
    ny = np.interp(site_s_arr, s, dx)
    sides = np.asarray([side for _, side in site_xy])
    sx = sx + 300.0 * sides * nx
    sy = sy + 300.0 * sides * ny
    return RoadLayout(
        s=s, lat=lat, lon=lon,
        section_end=np.asarray(section_end), section_env=tuple(section_env),
        site_s=site_s_arr, site_ids=np.arange(1, site_s_arr.size + 1),
        site_lat=_LAT0 + sy / _M_PER_DEG,
        site_lon=_LON0 + sx / (_M_PER_DEG * math.cos(math.radians(_LAT0))),
    )


def cell_sites(config: GeneratorConfig) -> dict[int, tuple[float, float]]:
    return road_layout(config).cell_sites()


def save_cell_sites(sites: dict[int, tuple[float, float]], path) -> None:
    payload = {str(k): {"lat": v[0], "lon": v[1]} for k, v in sorted(sites.items())}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_cell_sites(path) -> dict[int, tuple[float, float]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {int(k): (float(v["lat"]), float(v["lon"])) for k, v in raw.items()}


# --------------------------------------------------------------------------
# generation


@njit(cache=True)
def _gauss_markov(rho, eps, z0):
    out = np.empty(rho.size)
    z = z0
    for i in range(rho.size):
        z = rho[i] * z + math.sqrt(max(0.0, 1.0 - rho[i] * rho[i])) * eps[i]
        out[i] = z
    return out


@njit(cache=True)
def _drive(n, dt, park_n, mean_speed_of_s, sec_end, speed_sigma_of_sec, rho_v, eps_v,
           road_len, s0, direction0):
    s = np.empty(n)
    v = np.empty(n)
    pos = s0
    heading = direction0
    z = 0.0
    for i in range(n):
        j = 0
        while j < sec_end.size - 1 and pos > sec_end[j]:
            j += 1
        z = rho_v * z + math.sqrt(1.0 - rho_v * rho_v) * eps_v[i]
        if i < park_n:
            speed = 0.0
        else:
            speed = mean_speed_of_s[j] + speed_sigma_of_sec[j] * z
            speed = min(max(speed, 5.0), 140.0)
        v[i] = speed
        s[i] = pos
        pos += heading * speed / 3.6 * dt
        if pos > road_len:
            pos = 2 * road_len - pos
            heading = -1.0
        elif pos < 0.0:
            pos = -pos
            heading = 1.0
    return s, v


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _drive_processes(config: GeneratorConfig, layout: RoadLayout, r: int, n: int, dt: float):
    """Vehicle motion and cell-side processes shared by every device in one drive."""
    ss = np.random.SeedSequence([config.seed, 1, r])
    rng = np.random.default_rng(ss)
    envs = layout.section_env
    profs = [config.env_profiles[e] for e in envs]
    park_n = int(round(config.park_duration / dt))
    forward = r % 2 == 0
    s, v = _drive(
        n, dt, park_n,
        np.array([p.speed_kmh for p in profs]), layout.section_end,
        np.array([p.speed_sigma for p in profs]),
        0.98 ** dt, rng.standard_normal(n),
        layout.length, 0.0 if forward else layout.length, 1.0 if forward else -1.0,
    )
    sec = layout.env_at(s)
    site = layout.serving_cell(s)
    cell_id = layout.site_ids[site]
    handover = np.r_[True, cell_id[1:] != cell_id[:-1]]
    # time since the last handover; the run start counts as one
    last = np.maximum.accumulate(np.where(handover, np.arange(n), 0))
    t_since_ho = (np.arange(n) - last) * dt

    # a fresh cell means a fresh, independent load level
    load_z = _restart_on(handover, rng.standard_normal(n), config.load_ar ** dt, rng.standard_normal(n))
    load_logit = np.array([p.load_logit for p in profs])[sec] + config.load_sigma * load_z
    cell_load = np.clip(_logistic(load_logit), 0.0, 1.0)

    max_ues = np.array([p.max_ues for p in profs])[sec]
    u_draw = rng.random(n)
    step_draw = rng.random(n)
    ues = np.empty(n, dtype=np.int64)
    cur = 1
    p_change = min(1.0, config.ues_change_rate * dt)
    for i in range(n):
        m = int(max_ues[i])
        if handover[i]:
            # geometric-like: mostly alone in the cell
            cur = 1 + int(min(m - 1, math.floor(-math.log(max(u_draw[i], 1e-12)) / config.ues_decay)))
        elif step_draw[i] < p_change:
            cur = cur + (1 if u_draw[i] < 0.5 else -1)
        cur = min(max(cur, 1), m)
        ues[i] = cur

    cell_tput_dl = np.maximum(0.0, cell_load * 60.0 * (1.0 + config.cell_tput_noise * rng.standard_normal(n)))
    cell_tput_ul = np.maximum(0.0, cell_load * 20.0 * (1.0 + config.cell_tput_noise * rng.standard_normal(n)))
    run_factor = math.exp(config.run_sigma * rng.standard_normal() - 0.5 * config.run_sigma**2)
    return {
        "s": s, "speed": v, "sec": sec, "cell_id": cell_id, "t_since_ho": t_since_ho,
        "cell_load": cell_load, "active_ues": ues, "cell_tput_dl": cell_tput_dl,
        "cell_tput_ul": cell_tput_ul, "run_factor": run_factor,
    }


@njit(cache=True)
def _restart_on(flags, fresh, rho, eps):
    """Unit Gauss-Markov path that restarts from ``fresh`` wherever ``flags`` is set."""
    out = np.empty(flags.size)
    cur = 0.0
    c = math.sqrt(max(0.0, 1 - rho * rho))
    for i in range(flags.size):
        cur = fresh[i] if flags[i] else rho * cur + c * eps[i]
        out[i] = cur
    return out


def _device_trace(config, layout, drive, r, direction, n, dt):
    ss = np.random.SeedSequence([config.seed, 2, r, DIRECTIONS.index(direction)])
    rng = np.random.default_rng(ss)
    envs = layout.section_env
    profs = [config.env_profiles[e] for e in envs]
    sec = drive["sec"]
    speed = drive["speed"]
    eff_speed = np.maximum(speed, config.min_decorrelation_speed_kmh)
    scale = np.array([p.sigma_scale for p in profs])[sec]
    cols = {}
    for f in AR_FEATURES:
        rho = config.ar_coefficient[f] ** (dt * eff_speed / config.ref_speed_kmh)
        z = _gauss_markov(rho, rng.standard_normal(n), rng.standard_normal())
        mean = np.array([p.means[f] for p in profs])[sec]
        cols[f] = mean + config.noise_sigma[f] * scale * z
    rsrp_mean = np.array([p.means["rsrp_dbm"] for p in profs])[sec]
    cols["sinr_db"] = cols["sinr_db"] + config.sinr_rsrp_coupling * (cols["rsrp_dbm"] - rsrp_mean)
    for f in ("rsrp_margin_db", "rsrq_margin_db"):
        cols[f] = np.maximum(cols[f], 0.0)

    latent = _gauss_markov(np.full(n, config.latent_ar ** dt), rng.standard_normal(n), rng.standard_normal())
    latent = np.exp(config.latent_sigma * latent - 0.5 * config.latent_sigma**2)
    eff = np.array([p.efficiency for p in profs])[sec]
    share = (1.0 - drive["cell_load"]) / drive["active_ues"]
    common = eff * drive["run_factor"] * latent * share
    true_sinr = cols["sinr_db"]
    true_rsrp = cols["rsrp_dbm"]
    peak_dl = 75.0 * _logistic((true_sinr - 8.0) / 3.5)
    peak_ul = 26.0 * _logistic((true_rsrp + 100.0) / 6.0)
    tput_dl = np.minimum(TPUT_CAP["dl"], common * peak_dl) * (1.0 + config.tput_noise * rng.standard_normal(n))
    tput_ul = np.minimum(TPUT_CAP["ul"], common * peak_ul) * (1.0 + config.tput_noise * rng.standard_normal(n))

    if config.device_grade == "ce":
        noise_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3, r, DIRECTIONS.index(direction)]))
        for f in MEASUREMENT_DB_FEATURES:
            cols[f] = cols[f] + config.ce_noise_db * noise_rng.standard_normal(n)
        for f in ("rsrp_margin_db", "rsrq_margin_db"):
            cols[f] = np.maximum(cols[f], 0.0)

    sinr = cols["sinr_db"]
    cqi = np.clip(np.round(1.0 + (sinr + 6.0) * 14.0 / 30.0), 0, 15).astype(np.int64)
    rank = np.where(sinr >= 12.0, 2, 1).astype(np.int64)
    lat, lon = layout.position(drive["s"])
    n_tcp = int(round(config.tcp_duration / dt))
    protocol = np.array(["udp"] * n, dtype=object)
    if n_tcp:
        protocol[n - min(n, n_tcp):] = "tcp"
    frame = pd.DataFrame({
        "t_ms": np.round(np.arange(n) * dt * 1000.0).astype(np.int64),
        "lat": lat, "lon": lon, "speed_kmh": speed,
        "env": np.array(envs, dtype=object)[sec],
        "rsrp_dbm": cols["rsrp_dbm"], "rsrq_db": cols["rsrq_db"], "rssi_dbm": cols["rssi_dbm"],
        "sinr_db": sinr, "cqi": cqi, "rank": rank,
        "rsrp_margin_db": cols["rsrp_margin_db"], "rsrq_margin_db": cols["rsrq_margin_db"],
        "t_since_ho_s": drive["t_since_ho"], "cell_id": drive["cell_id"].astype(np.int64),
        "cell_load": drive["cell_load"], "active_ues": drive["active_ues"],
        "cell_tput_dl_mbps": drive["cell_tput_dl"], "cell_tput_ul_mbps": drive["cell_tput_ul"],
        "tput_dl_mbps": np.clip(tput_dl, 0.0, TPUT_CAP["dl"]),
        "tput_ul_mbps": np.clip(tput_ul, 0.0, TPUT_CAP["ul"]),
        "protocol": protocol,
    })
    return MeasurementRun(
        run_id=f"run{r:02d}", device_id=f"{config.device_grade}-{direction}",
        device_grade=config.device_grade, direction=direction, sample_period=dt, frame=frame,
    )


def generate(config: GeneratorConfig) -> list[MeasurementRun]:
    """Generate ``n_runs`` drives, one trace per configured direction each.

    Deterministic in ``config``; every drive and device draws from its own
    ``SeedSequence`` branch, so runs can be produced independently.
    """
    config.validate()
    layout = road_layout(config)
    dt = config.period
    n = int(round(config.run_duration / dt))
    if n < 1:
        raise ValueError("run_duration shorter than one sample period")
    runs = []
    for r in range(config.n_runs):
        drive = _drive_processes(config, layout, r, n, dt)
        for direction in config.directions:
            runs.append(_device_trace(config, layout, drive, r, direction, n, dt))
    return runs


# --------------------------------------------------------------------------
# CSV I/O


def save_csv(runs: Sequence[MeasurementRun], path) -> None:
    frames = []
    for run in runs:
        f = run.frame.copy()
        f.insert(0, "direction", run.direction)
        f.insert(0, "device_grade", run.device_grade)
        f.insert(0, "device_id", run.device_id)
        f.insert(0, "run_id", run.run_id)
        frames.append(f[CSV_COLUMNS])
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CSV_COLUMNS)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out.to_csv(fh, index=False, lineterminator="\n")


def load_csv(path) -> list[MeasurementRun]:
    """Read a trace CSV; rows are grouped by (run_id, device_id) in first-seen order."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaError("trace CSV has no header row")
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"trace CSV is missing column {missing[0]!r}")
    extra = [c for c in header if c not in CSV_COLUMNS]
    if extra:
        raise SchemaError(f"trace CSV has unexpected column {extra[0]!r}")
    if header != CSV_COLUMNS:
        raise SchemaError("trace CSV columns are out of order")
    dtypes = {c: str for c in RUN_COLUMNS + list(STR_COLUMNS)}
    df = pd.read_csv(path, dtype=dtypes, keep_default_na=False, na_values=[""])
    if df.empty:
        return []
    runs = []
    for (run_id, device_id), g in df.groupby(["run_id", "device_id"], sort=False):
        t = g["t_ms"].to_numpy()
        if np.any(np.diff(t) <= 0):
            raise OrderingError(f"t_ms is not strictly increasing in run {run_id!r} device {device_id!r}")
        meta = g.iloc[0]
        frame = g[SAMPLE_COLUMNS].reset_index(drop=True)
        for c in INT_COLUMNS:
            frame[c] = frame[c].astype(np.int64)
        period = float(np.median(np.diff(t))) / 1000.0 if t.size > 1 else 1.0
        runs.append(MeasurementRun(
            run_id=str(run_id), device_id=str(device_id), device_grade=str(meta["device_grade"]),
            direction=str(meta["direction"]), sample_period=period, frame=frame,
        ))
    return runs


# --------------------------------------------------------------------------
# preprocessing and views


def _long_slow_stretches(slow: np.ndarray, t_s: np.ndarray, period: float, min_duration: float) -> np.ndarray:
    drop = np.zeros(slow.size, dtype=bool)
    i = 0
    n = slow.size
    while i < n:
        if not slow[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and slow[j + 1]:
            j += 1
        if t_s[j] - t_s[i] + period >= min_duration:
            drop[i : j + 1] = True
        i = j + 1
    return drop


def preprocess(runs: Sequence[MeasurementRun], min_speed: float = 2.0,
               min_park_duration: float = 60.0) -> list[MeasurementRun]:
    """Keep UDP samples and cut out stationary stretches.

    A stretch of consecutive samples with ``speed < min_speed`` is removed
    when it lasts at least ``min_park_duration`` seconds. Runs that end up
    empty are dropped; sample order is preserved.
    """
    out = []
    for run in runs:
        f = run.frame
        f = f[f["protocol"].to_numpy() == "udp"]
        if len(f):
            slow = f["speed_kmh"].to_numpy() < min_speed
            t_s = f["t_ms"].to_numpy() / 1000.0
            drop = _long_slow_stretches(slow, t_s, run.sample_period, min_park_duration)
            f = f[~drop]
        if len(f):
            out.append(run.with_frame(f))
    return out


def filter_env(runs: Sequence[MeasurementRun], env: str) -> list[MeasurementRun]:
    """Restrict every run to its samples in one environment; empty runs vanish."""
    out = []
    for run in runs:
        f = run.frame[run.frame["env"].to_numpy() == env]
        if len(f):
            out.append(run.with_frame(f))
    return out


def select_direction(runs: Sequence[MeasurementRun], direction: str) -> list[MeasurementRun]:
    return [r for r in runs if r.direction == direction]


def runs_equal(a: Sequence[MeasurementRun], b: Sequence[MeasurementRun], atol: float = 1e-9) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.run_id, x.device_id, x.device_grade, x.direction) != (y.run_id, y.device_id, y.device_grade, y.direction):
            return False
        if list(x.frame.columns) != list(y.frame.columns) or len(x.frame) != len(y.frame):
            return False
        for c in x.frame.columns:
            u, v = x.frame[c].to_numpy(), y.frame[c].to_numpy()
            if c in STR_COLUMNS:
                if not np.array_equal(u.astype(str), v.astype(str)):
                    return False
            elif not np.allclose(u.astype(float), v.astype(float), rtol=0, atol=atol):
                return False
    return True

