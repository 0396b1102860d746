"""Shapley attributions and accumulated local effects for any fitted predictor.

Both explanations treat the model as a black box ``f(X) -> y``. Shapley
values use interventional substitution: a coalition ``S`` keeps the
instance's values on ``S`` and takes the remaining features from each
background row, and the coalition value is the mean prediction over the
background. With few features every coalition is enumerated and the values
are exact; otherwise a kernel-weighted sample of coalitions is solved as a
constrained weighted least-squares problem whose constraint enforces local
accuracy.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .models import FittedModel, feature_matrix, predict_matrix

DEFAULT_MAX_EXACT = 12
DEFAULT_COALITIONS = 2048
DEFAULT_BACKGROUND = 100
DEFAULT_ALE_BINS = 20
_CHUNK_ROWS = 1 << 18


@dataclass(frozen=True)
class ShapExplanation:
    base_value: float
    phi: np.ndarray
    features: tuple[str, ...]
    values: np.ndarray  # the explained instance
    prediction: float
    exact: bool

    def as_series(self) -> pd.Series:
        return pd.Series(self.phi, index=list(self.features))


@dataclass(frozen=True)
class ShapSummary:
    features: tuple[str, ...]
    base_value: float
    phi: np.ndarray  # (n_instances, p)
    values: np.ndarray  # (n_instances, p)
    exact: bool

    @property
    def mean_abs(self) -> np.ndarray:
        return np.abs(self.phi).mean(axis=0)

    @property
    def ranking(self) -> tuple[str, ...]:
        # stable sort so ties keep schema order
        order = np.argsort(-self.mean_abs, kind="stable")
        return tuple(self.features[i] for i in order)

    def rank_of(self, feature: str) -> int:
        """1-based rank of ``feature`` by mean absolute attribution."""
        return self.ranking.index(feature) + 1

    def importance_csv(self, path) -> None:
        m = self.mean_abs
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature", "mean_abs_phi"])
            for r, f in enumerate(self.ranking, 1):
                w.writerow([r, f, repr(float(m[self.features.index(f)]))])

    def beeswarm_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "feature", "phi", "value"])
            for i in range(self.phi.shape[0]):
                for j, f in enumerate(self.features):
                    w.writerow([i, f, repr(float(self.phi[i, j])), repr(float(self.values[i, j]))])


@dataclass(frozen=True)
class AleCurve:
    feature: str
    bin_edges: np.ndarray
    effect: np.ndarray  # centered, one value per edge
    counts: np.ndarray  # samples per bin

    def weighted_mean(self) -> float:
        """Data-weighted mean of the curve, each bin represented by its edge midpoint."""
        mid = 0.5 * (self.effect[:-1] + self.effect[1:])
        return float(np.sum(self.counts * mid) / np.sum(self.counts))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "edge", "ale", "bin_count"])
            cnt = np.r_[self.counts, 0]
            for e, a, c in zip(self.bin_edges, self.effect, cnt):
                w.writerow([self.feature, repr(float(e)), repr(float(a)), int(c)])


# --------------------------------------------------------------------------
# model adapter


class _Predictor:
    """Uniform ``(n, p) -> (n,)`` view of a fitted model or a plain callable."""

    def __init__(self, model, columns: Sequence[str] | None):
        if isinstance(model, FittedModel):
            self.columns = tuple(model.columns)
            self._f = lambda X: predict_matrix(model, X)
            self._model = model
        elif callable(model):
            if columns is None:
                raise ValueError("a callable model needs explicit feature columns")
            self.columns = tuple(columns)
            self._f = lambda X: np.asarray(model(X), dtype=float).ravel()
            self._model = None
        else:
            raise TypeError("model must be a FittedModel or a callable")

    def matrix(self, data) -> np.ndarray:
        if self._model is not None:
            if isinstance(data, pd.Series):
                data = data.to_frame().T
            return feature_matrix(self._model, data)
        if isinstance(data, pd.Series):
            data = data.to_frame().T
        if isinstance(data, pd.DataFrame):
            missing = [c for c in self.columns if c not in data.columns]
            if missing:
                raise ValueError(f"input lacks feature column {missing[0]!r}")
            return data[list(self.columns)].to_numpy(dtype=float)
        X = np.atleast_2d(np.asarray(data, dtype=float))
        if X.shape[1] != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} feature columns, got {X.shape[1]}")
        return X

    def __call__(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], _CHUNK_ROWS):
            out[lo : lo + _CHUNK_ROWS] = self._f(X[lo : lo + _CHUNK_ROWS])
        return out


def sample_background(data, n: int = DEFAULT_BACKGROUND, seed: int = 0):
    """Uniform sample of ``n`` rows without replacement (all rows if fewer)."""
    rows = len(data)
    if rows == 0:
        raise ValueError("background source is empty")
    idx = np.sort(np.random.default_rng(seed).choice(rows, size=min(n, rows), replace=False))
    return data.iloc[idx] if isinstance(data, pd.DataFrame) else np.asarray(data)[idx]


# --------------------------------------------------------------------------
# Shapley values


def _coalition_values(f: _Predictor, x: np.ndarray, B: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Mean prediction over the background for each coalition mask (rows of ``masks``)."""
    nb = B.shape[0]
    out = np.empty(masks.shape[0])
    step = max(1, _CHUNK_ROWS // nb)
    for lo in range(0, masks.shape[0], step):
        m = masks[lo : lo + step]
        X = np.where(m[:, None, :], x[None, None, :], B[None, :, :]).reshape(-1, x.size)
        out[lo : lo + step] = f(X).reshape(m.shape[0], nb).mean(axis=1)
    return out


def _all_masks(p: int) -> np.ndarray:
    ints = np.arange(1 << p, dtype=np.int64)
    return ((ints[:, None] >> np.arange(p)) & 1).astype(bool)


def _exact_weights(p: int) -> np.ndarray:
    # weight of a coalition of size s that excludes the feature: s!(p-s-1)!/p!
    return np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])


def exact_shapley(values: np.ndarray, p: int) -> np.ndarray:
    """Shapley values from the full table of coalition values indexed by bitmask."""
    w = _exact_weights(p)
    ints = np.arange(1 << p, dtype=np.int64)
    size = np.array([bin(i).count("1") for i in range(1 << p)])
    phi = np.zeros(p)
    for i in range(p):
        bit = 1 << i
        without = ints[(ints & bit) == 0]
        phi[i] = np.sum(w[size[without]] * (values[without | bit] - values[without]))
    return phi


def kernel_coalitions(p: int, n_coalitions: int, seed: int) -> np.ndarray:
    """Paired coalition sample: sizes drawn from the Shapley kernel, each followed by its complement."""
    rng = np.random.default_rng(seed)
    sizes = np.arange(1, p)
    q = (p - 1) / (sizes * (p - sizes))
    q = q / q.sum()
    n_pairs = max(1, n_coalitions // 2)
    masks = np.zeros((2 * n_pairs, p), dtype=bool)
    draw = rng.choice(sizes, size=n_pairs, p=q)
    for k, s in enumerate(draw):
        on = rng.choice(p, size=s, replace=False)
        masks[2 * k, on] = True
        masks[2 * k + 1] = ~masks[2 * k]
    return masks


def kernel_solve(masks: np.ndarray, v: np.ndarray, v0: float, fx: float) -> np.ndarray:
    """Least squares ``v - v0 ~ masks @ phi`` subject to ``sum(phi) = fx - v0``.

    Coalitions are sampled in proportion to their kernel weight, so the
    regression weights are uniform. The constraint is eliminated by
    substituting the last coefficient.
    """
    Z = masks.astype(float)
    p = Z.shape[1]
    total = fx - v0
    y = v - v0 - Z[:, -1] * total
    A = Z[:, :-1] - Z[:, -1:]
    head, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.r_[head, total - head.sum()] if p > 1 else np.array([total])


def _explain_rows(f: _Predictor, Xi: np.ndarray, B: np.ndarray, max_exact: int, n_coalitions: int, seed: int):
    p = Xi.shape[1]
    base = float(f(B).mean())
    exact = p <= max_exact
    masks = _all_masks(p) if exact else kernel_coalitions(p, n_coalitions, seed)
    phis = np.empty_like(Xi)
    preds = f(Xi)
    for r, x in enumerate(Xi):
        v = _coalition_values(f, x, B, masks)
        if exact:
            v[0], v[-1] = base, preds[r]  # empty and full coalitions are known exactly
            phis[r] = exact_shapley(v, p)
        else:
            phis[r] = kernel_solve(masks, v, base, preds[r])
    return base, phis, preds, exact


def shap_explain(model, instance, background, max_exact_features: int = DEFAULT_MAX_EXACT,
                 n_coalitions: int = DEFAULT_COALITIONS, seed: int = 0,
                 columns: Sequence[str] | None = None) -> ShapExplanation:
    """Shapley attribution of one prediction against a background set.

    Parameters
    ----------
    model : FittedModel or callable
        A callable must map an ``(n, p)`` array to ``n`` predictions and
        needs ``columns``.
    instance : pandas.Series, one-row DataFrame or 1-D array
    background : DataFrame or 2-D array
        Rows used to marginalise absent features; must be non-empty.
    max_exact_features : int
        Enumerate all ``2**p`` coalitions when ``p`` is at most this.
    n_coalitions : int
        Sample size for the kernel estimate when ``p`` is larger.
    """
    f = _Predictor(model, columns)
    x = f.matrix(instance)
    if x.shape[0] != 1:
        raise ValueError("explain one instance at a time (see shap_summary)")
    B = f.matrix(background)
    if B.shape[0] == 0:
        raise ValueError("background set is empty")
    base, phis, preds, exact = _explain_rows(f, x, B, max_exact_features, n_coalitions, seed)
    return ShapExplanation(base, phis[0], f.columns, x[0], float(preds[0]), exact)


def shap_summary(model, instances, background, max_exact_features: int = DEFAULT_MAX_EXACT,
                 n_coalitions: int = DEFAULT_COALITIONS, seed: int = 0,
                 columns: Sequence[str] | None = None) -> ShapSummary:
    """Attributions for many instances, ranked by mean absolute value.

    The kernel estimate reuses one coalition sample for all instances.
    """
    f = _Predictor(model, columns)
    X = f.matrix(instances)
    B = f.matrix(background)
    if B.shape[0] == 0:
        raise ValueError("background set is empty")
    base, phis, _, exact = _explain_rows(f, X, B, max_exact_features, n_coalitions, seed)
    return ShapSummary(f.columns, base, phis, X, exact)


# --------------------------------------------------------------------------
# accumulated local effects


def ale(model, data, feature: str, n_bins: int = DEFAULT_ALE_BINS,
        columns: Sequence[str] | None = None) -> AleCurve:
    """First-order ALE curve of ``feature`` on quantile bins.

    Each sample falls in the bin ``(e_k, e_k+1]`` (the first bin also holds
    the minimum); its local effect is the prediction change when the
    feature moves from the lower to the upper edge with all other features
    kept. Bin means are accumulated over the edges and centered so that the
    data-weighted mean of the curve is zero.
    """
    f = _Predictor(model, columns)
    X = f.matrix(data)
    if feature not in f.columns:
        raise KeyError(f"unknown feature {feature!r}")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    j = f.columns.index(feature)
    col = X[:, j]
    distinct = np.unique(col).size
    if distinct < 2:
        raise ValueError(f"feature {feature!r} is constant; ALE undefined")
    if distinct <= n_bins:
        warnings.warn(f"ALE: {feature!r} has {distinct} distinct values; using {distinct - 1} bins",
                      RuntimeWarning, stacklevel=2)
        n_bins = distinct - 1
    edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)))
    k = np.clip(np.searchsorted(edges, col, side="left") - 1, 0, edges.size - 2)
    lo = X.copy()
    hi = X.copy()
    lo[:, j] = edges[k]
    hi[:, j] = edges[k + 1]
    diff = f(hi) - f(lo)
    nb = edges.size - 1
    counts = np.bincount(k, minlength=nb)
    sums = np.bincount(k, weights=diff, minlength=nb)
    local = np.divide(sums, counts, out=np.zeros(nb), where=counts > 0)
    curve = np.r_[0.0, np.cumsum(local)]
    mid = 0.5 * (curve[:-1] + curve[1:])
    curve = curve - np.sum(counts * mid) / counts.sum()
    return AleCurve(feature, edges, curve, counts)


# --------------------------------------------------------------------------
# SVG rendering


def _svg(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}</svg>\n')


def beeswarm_svg(summary: ShapSummary, path, top: int = 5, seed: int = 0) -> None:
    """Beeswarm of the ``top`` features: x = phi, colour = feature value (blue low, red high)."""
    feats = summary.ranking[:top]
    W, row_h, left, right = 640, 40, 150, 20
    H = row_h * len(feats) + 50
    lim = float(np.max(np.abs(summary.phi[:, [summary.features.index(f) for f in feats]]))) or 1.0
    sx = lambda v: left + (v + lim) / (2 * lim) * (W - left - right)  # noqa: E731
    rng = np.random.default_rng(seed)
    parts = [f'<line x1="{sx(0):.1f}" y1="10" x2="{sx(0):.1f}" y2="{H - 35}" stroke="#999"/>']
    for r, name in enumerate(feats):
        j = summary.features.index(name)
        y0 = 25 + r * row_h
        parts.append(f'<text x="{left - 8}" y="{y0 + 4}" text-anchor="end">{escape(name)}</text>')
        vals = summary.values[:, j]
        span = np.ptp(vals) or 1.0
        for ph, v in zip(summary.phi[:, j], vals):
            t = (v - vals.min()) / span
            colour = f"rgb({int(255 * t)},40,{int(255 * (1 - t))})"
            jitter = rng.uniform(-row_h * 0.3, row_h * 0.3)
            parts.append(f'<circle cx="{sx(ph):.1f}" cy="{y0 + jitter:.1f}" r="2.5" fill="{colour}"/>')
    parts.append(f'<text x="{(W + left) / 2:.0f}" y="{H - 12}" text-anchor="middle">SHAP value (Mbit/s)</text>')
    Path(path).write_text(_svg(W, H, "\n".join(parts) + "\n"), encoding="utf-8")


def ale_svg(curve: AleCurve, path) -> None:
    W, H, m = 520, 320, 50
    x, y = curve.bin_edges, curve.effect
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(y.min()), float(y.max())
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    sx = lambda v: m + (v - x0) / ((x1 - x0) or 1.0) * (W - 2 * m)  # noqa: E731
    sy = lambda v: H - m - (v - y0) / (y1 - y0) * (H - 2 * m)  # noqa: E731
    pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y))
    body = (
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>\n'
        f'<line x1="{m}" y1="{H - m}" x2="{W - m}" y2="{H - m}" stroke="black"/>\n'
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{H - m}" stroke="black"/>\n'
        f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{escape(curve.feature)}</text>\n'
        f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" text-anchor="middle">ALE (Mbit/s)</text>\n'
        f'<text x="{m - 4}" y="{sy(y1) + 4:.1f}" text-anchor="end">{y1:.2f}</text>\n'
        f'<text x="{m - 4}" y="{sy(y0) + 4:.1f}" text-anchor="end">{y0:.2f}</text>\n'
    )
    Path(path).write_text(_svg(W, H, body), encoding="utf-8")

