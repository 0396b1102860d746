import itertools

import numpy as np
import pandas as pd
import pytest

from qosbench.explain import (
    AleCurve, ale, ale_svg, beeswarm_svg, kernel_coalitions, sample_background, shap_explain, shap_summary,
)
from qosbench.models import ModelSpec, fit

from conftest import as_table


def _permutation_shapley(f, x, B):
    """Oracle: average marginal contribution over every feature ordering."""
    p = x.size

    def v(S):
        Z = B.copy()
        Z[:, list(S)] = x[list(S)]
        return f(Z).mean()

    phi = np.zeros(p)
    perms = list(itertools.permutations(range(p)))
    for order in perms:
        S = []
        for j in order:
            before = v(S)
            S.append(j)
            phi[j] += v(S) - before
    return phi / len(perms)


def _nonlinear(X):
    X = np.atleast_2d(X)
    return np.sin(X[:, 0]) * X[:, 1] + X[:, 2] ** 2 - 0.5 * X[:, 0] * X[:, 3]


COLS = ["a", "b", "c", "d"]


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    return rng.normal(size=(30, 4)), rng.normal(size=4)


def test_exact_matches_permutation_oracle(data):
    B, x = data
    e = shap_explain(_nonlinear, x, B, columns=COLS)
    assert e.exact
    assert np.allclose(e.phi, _permutation_shapley(_nonlinear, x, B), atol=1e-10)


def test_efficiency(data):
    B, x = data
    e = shap_explain(_nonlinear, x, B, columns=COLS)
    assert abs(e.base_value + e.phi.sum() - _nonlinear(x)[0]) < 1e-6
    assert e.base_value == pytest.approx(_nonlinear(B).mean())


def test_dummy_and_linear_closed_form():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(50, 2))
    x = np.array([1.7, -4.0])
    f = lambda X: 3.0 * X[:, 0] + 0.0 * X[:, 1]
    e = shap_explain(f, x, B, columns=["x1", "x2"])
    assert e.phi[1] == 0.0
    assert e.phi[0] == pytest.approx(3.0 * (x[0] - B[:, 0].mean()), abs=1e-12)


def test_symmetry_exchangeable_features():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(20, 3))
    B[:, 1] = B[:, 0]
    x = np.array([0.8, 0.8, -1.0])
    f = lambda X: X[:, 0] * X[:, 1] + np.cos(X[:, 2])
    e = shap_explain(f, x, B, columns=["u", "v", "w"])
    assert e.phi[0] == pytest.approx(e.phi[1], abs=1e-6)


def test_duplicated_feature_splits_attribution():
    rng = np.random.default_rng(3)
    B1 = rng.normal(size=(40, 2))
    x1 = np.array([1.2, 0.3])
    single = shap_explain(lambda X: np.tanh(X[:, 0]) + X[:, 1], x1, B1, columns=["a", "z"]).phi[0]
    B2 = np.c_[B1[:, :1], B1[:, :1], B1[:, 1:]]
    x2 = np.array([1.2, 1.2, 0.3])
    dup = shap_explain(lambda X: np.tanh(0.5 * (X[:, 0] + X[:, 1])) + X[:, 2], x2, B2, columns=["a", "b", "z"])
    assert abs(dup.phi[0] + dup.phi[1] - single) <= 0.1 * abs(single)
    assert dup.phi[0] == pytest.approx(dup.phi[1], abs=1e-9)


def test_kernel_path_agrees_with_exact():
    rng = np.random.default_rng(4)
    p = 6
    B = rng.normal(size=(25, p))
    x = rng.normal(size=p)
    w = rng.normal(size=p)
    f = lambda X: X @ w + 0.3 * X[:, 0] * X[:, 1]
    exact = shap_explain(f, x, B, columns=[f"f{i}" for i in range(p)])
    approx = shap_explain(f, x, B, max_exact_features=3, n_coalitions=4096, seed=1,
                          columns=[f"f{i}" for i in range(p)])
    assert not approx.exact
    assert approx.base_value + approx.phi.sum() == pytest.approx(f(x[None])[0], abs=1e-8)
    assert np.allclose(approx.phi, exact.phi, atol=0.05 * np.abs(exact.phi).max())


def test_kernel_coalitions_are_paired_and_proper():
    masks = kernel_coalitions(8, 200, seed=0)
    sizes = masks.sum(axis=1)
    assert np.all((sizes > 0) & (sizes < 8))
    assert np.array_equal(masks[0::2], ~masks[1::2])


def test_noise_feature_ranks_last():
    last = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(400, 5))
        y = 3 * X[:, 0] + 2 * X[:, 1] ** 2 + X[:, 2] + 0.5 * X[:, 3] + 0.05 * rng.normal(size=400)
        m = fit(ModelSpec("gradient_boosting", {"n_estimators": 40, "max_depth": 3, "learning_rate": 0.3},
                          seed=seed), as_table(X, y))
        s = shap_summary(m, X[:30], X[100:130])
        last += s.ranking[-1] == "x4"
    assert last > 10


def test_summary_outputs(tmp_path, data):
    B, _ = data
    s = shap_summary(_nonlinear, B[:5], B, columns=COLS)
    assert s.phi.shape == (5, 4) and s.rank_of(s.ranking[0]) == 1
    s.importance_csv(tmp_path / "i.csv")
    s.beeswarm_csv(tmp_path / "b.csv")
    assert (tmp_path / "i.csv").read_text().splitlines()[0] == "rank,feature,mean_abs_phi"
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 1 + 5 * 4
    beeswarm_svg(s, tmp_path / "b.svg")
    assert (tmp_path / "b.svg").read_text().startswith("<svg")


def test_shap_input_errors(data):
    B, x = data
    with pytest.raises(ValueError, match="columns"):
        shap_explain(_nonlinear, x, B)
    with pytest.raises(ValueError, match="empty"):
        shap_explain(_nonlinear, x, B[:0], columns=COLS)
    with pytest.raises(ValueError, match="one instance"):
        shap_explain(_nonlinear, B[:2], B, columns=COLS)


def test_shap_on_fitted_model_uses_schema(data):
    B, x = data
    m = fit(ModelSpec("linear"), as_table(B, B @ [1.0, 2.0, 0.0, -1.0], columns=COLS))
    frame = pd.DataFrame(B, columns=COLS)[["d", "c", "b", "a"]]
    e = shap_explain(m, pd.Series(x, index=COLS), frame)
    assert e.features == tuple(COLS)
    assert np.allclose(e.phi, np.array([1.0, 2.0, 0.0, -1.0]) * (x - B.mean(axis=0)), atol=1e-10)


def test_sample_background():
    df = pd.DataFrame({"a": np.arange(10)})
    s = sample_background(df, 4, seed=1)
    assert len(s) == 4 and s["a"].is_monotonic_increasing
    assert len(sample_background(df, 100)) == 10
    with pytest.raises(ValueError):
        sample_background(df.iloc[:0])


def test_ale_linear_slope():
    rng = np.random.default_rng(5)
    X = np.c_[rng.normal(size=500), rng.uniform(size=500)]
    beta = 2.5
    f = lambda Z: beta * Z[:, 0] - 4.0 * Z[:, 1]
    c = ale(f, X, "x", columns=["x", "y"])
    slopes = np.diff(c.effect) / np.diff(c.bin_edges)
    assert np.allclose(slopes, beta, atol=1e-6)
    assert abs(c.weighted_mean()) < 1e-9


def test_ale_ignored_feature_is_zero():
    X = np.random.default_rng(6).normal(size=(200, 2))
    c = ale(lambda Z: Z[:, 0] ** 2, X, "y", columns=["x", "y"])
    assert np.all(np.abs(c.effect) <= 1e-9)


def test_ale_few_distinct_values_warns():
    X = np.c_[np.repeat([0.0, 1.0, 2.0], 10), np.zeros(30)]
    with pytest.warns(RuntimeWarning, match="distinct"):
        c = ale(lambda Z: Z[:, 0], X, "x", n_bins=10, columns=["x", "y"])
    assert c.bin_edges.tolist() == [0.0, 1.0, 2.0]
    assert c.counts.sum() == 30


def test_ale_errors():
    X = np.c_[np.ones(10), np.arange(10.0)]
    with pytest.raises(ValueError, match="constant"):
        ale(lambda Z: Z[:, 0], X, "x", columns=["x", "y"])
    with pytest.raises(KeyError):
        ale(lambda Z: Z[:, 0], X, "nope", columns=["x", "y"])


def test_ale_csv_and_svg(tmp_path):
    c = AleCurve("x", np.array([0.0, 1.0, 2.0]), np.array([-1.0, 0.0, 1.0]), np.array([5, 5]))
    c.to_csv(tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines() == [
        "feature,edge,ale,bin_count", "x,0.0,-1.0,5", "x,1.0,0.0,5", "x,2.0,1.0,0"]
    ale_svg(c, tmp_path / "a.svg")
    assert "polyline" in (tmp_path / "a.svg").read_text() or "path" in (tmp_path / "a.svg").read_text()


def test_ale_sinr_curve_on_generated_data(small_traces):
    from qosbench.features import assemble
    from qosbench.splits import split
    runs, _ = small_traces
    dl = [r for r in runs if r.direction == "dl"]
    train, _ = assemble(dl, "MD", split(dl, "folds"))
    m = fit(ModelSpec("gradient_boosting", {"n_estimators": 100, "max_depth": 4, "learning_rate": 0.1}), train)
    c = ale(m, train.X, "sinr_db", n_bins=10)
    steps = np.diff(c.effect)
    # rises overall, and the top of the range is flatter than the steepest part
    assert c.effect[-1] - c.effect[0] > 0
    assert np.mean(steps >= -0.05 * np.abs(steps).max()) >= 0.8
    assert steps[-2:].mean() < steps.max()
