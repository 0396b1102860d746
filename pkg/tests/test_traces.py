import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from qosbench.stationarity import autocorrelation
from qosbench.traces import (
    AR_FEATURES, CSV_COLUMNS, TPUT_CAP, GeneratorConfig, OrderingError, SchemaError, generate, load_csv,
    preprocess, runs_equal, save_csv,
)

from conftest import make_run


def test_same_seed_byte_identical(tmp_path, small_config):
    save_csv(generate(small_config), tmp_path / "a.csv")
    save_csv(generate(small_config), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_different_seed_differs(small_config):
    a = generate(small_config)
    b = generate(GeneratorConfig(seed=small_config.seed + 1, n_runs=3, run_duration=900.0))
    assert not runs_equal(a, b)


def test_invariants_hold(small_config):
    for run in generate(small_config):
        f = run.frame
        assert np.all(np.diff(f["t_ms"]) > 0)
        assert f["cell_load"].between(0, 1).all()
        assert (f["speed_kmh"] >= 0).all()
        assert f["cqi"].between(0, 15).all()
        assert f["rank"].isin([1, 2]).all()
        assert f["tput_dl_mbps"].between(0, TPUT_CAP["dl"]).all()
        assert f["tput_ul_mbps"].between(0, TPUT_CAP["ul"]).all()
        assert set(f["env"]) <= {"highway", "suburban", "rural"}
        assert np.allclose(np.diff(f["t_ms"]), run.sample_period * 1000, rtol=0.01)


def test_zero_noise_fixed_regime_is_constant():
    cfg = GeneratorConfig(
        seed=1, n_runs=1, run_duration=300.0, regime_schedule=(("suburban", 300.0),),
        noise_sigma={f: 0.0 for f in AR_FEATURES}, sinr_rsrp_coupling=0.0,
    )
    run = generate(cfg)[0]
    means = cfg.env_profiles["suburban"].means
    for f in AR_FEATURES:
        assert np.allclose(run.frame[f], means[f]), f


def test_default_sinr_lag1_autocorrelation():
    runs = generate(GeneratorConfig(seed=0, n_runs=2, run_duration=1800.0))
    for run in runs:
        rho = autocorrelation(run.frame["sinr_db"].to_numpy(), 1)[1]
        assert 0.8 <= rho <= 0.99


def test_load_coupling_signs():
    runs = generate(GeneratorConfig(seed=5, n_runs=3))
    df = pd.concat([r.frame for r in runs if r.direction == "dl"])
    assert df["tput_dl_mbps"].corr(df["cell_load"]) < 0
    assert df["tput_dl_mbps"].corr(df["sinr_db"]) > 0


@pytest.mark.parametrize("bad, match", [
    ({"regime_schedule": []}, "empty"),
    ({"regime_schedule": [["suburban", 0.0]]}, "non-positive"),
    ({"run_duration": -5.0}, "positive"),
    ({"nonsense": 1}, "nonsense"),
])
def test_config_rejects(bad, match):
    with pytest.raises(ValueError, match=match):
        GeneratorConfig.from_dict(bad)


def test_config_json_round_trip():
    cfg = GeneratorConfig.from_dict({"seed": 9, "env_profiles": {"highway": {"efficiency": 0.3}}})
    again = GeneratorConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.env_profiles["highway"].efficiency == 0.3
    assert "suburban" in again.env_profiles


def test_csv_round_trip(tmp_path, small_config):
    runs = generate(small_config)
    save_csv(runs, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert runs_equal(load_csv(tmp_path / "t.csv"), runs, atol=1e-9)


def test_csv_missing_column_named(tmp_path):
    run = make_run(5)
    save_csv([run], tmp_path / "t.csv")
    df = pd.read_csv(tmp_path / "t.csv").drop(columns=["sinr_db"])
    df.to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(SchemaError, match="sinr_db"):
        load_csv(tmp_path / "bad.csv")


def test_csv_header_only_is_empty(tmp_path):
    (tmp_path / "e.csv").write_text(",".join(CSV_COLUMNS) + "\n")
    assert load_csv(tmp_path / "e.csv") == []


def test_csv_non_monotone_time(tmp_path):
    run = make_run(5, t_ms=np.array([0, 1000, 3000, 2000, 4000]))
    save_csv([run], tmp_path / "t.csv")
    with pytest.raises(OrderingError):
        load_csv(tmp_path / "t.csv")


def test_preprocess_drops_tcp_run():
    run = make_run(20, protocol=np.full(20, "tcp", dtype=object))
    assert preprocess([run]) == []


def test_preprocess_excises_parked_segment():
    n = 1800
    speed = np.full(n, 60.0)
    speed[600:1200] = 0.0  # ten minutes parked
    out = preprocess([make_run(n, speed_kmh=speed)], min_speed=2.0, min_park_duration=60.0)
    t = out[0].frame["t_ms"].to_numpy() // 1000
    assert len(out[0]) == 1200
    assert t[599] == 599 and t[600] == 1200


def test_preprocess_keeps_short_stop():
    speed = np.full(300, 60.0)
    speed[100:130] = 0.0  # 30 s at a light
    out = preprocess([make_run(300, speed_kmh=speed)], min_park_duration=60.0)
    assert len(out[0]) == 300


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(2.5, 150.0), min_size=1, max_size=60))
def test_preprocess_moving_run_unchanged(speeds):
    run = make_run(len(speeds), speed_kmh=np.array(speeds))
    out = preprocess([run], min_speed=2.0)
    assert runs_equal(out, [run])
