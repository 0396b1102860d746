"""Histogram CART regression trees and the two ensembles built on them.

Features are mapped to integer bin codes once per fit. When a feature has
no more distinct values than ``max_bins`` every distinct value gets its own
bin, so the split search is exact; otherwise bin edges sit at quantile
midpoints. Thresholds are stored in raw feature units and prediction sends
``x <= threshold`` left.

Split choice maximises the variance reduction. Candidate features are
scanned in ascending index order and thresholds in ascending order with a
strict comparison, so ties go to the lowest feature and then the lowest
threshold.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LEAF = -1


def bin_edges(X: np.ndarray, max_bins: int | None) -> list[np.ndarray]:
    """Per-feature split candidates (midpoints between retained values)."""
    edges = []
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        if max_bins is not None and u.size > max_bins:
            q = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1], method="linear")
            # snap to observed values so edges fall between real points
            q = np.unique(u[np.searchsorted(u, q).clip(0, u.size - 1)])
            if q.size and q[-1] == u[-1]:
                q = q[:-1]
            nxt = u[np.searchsorted(u, q, side="right").clip(0, u.size - 1)]
            e = 0.5 * (q + nxt)
        else:
            e = 0.5 * (u[:-1] + u[1:])
        edges.append(np.asarray(e, dtype=np.float64))
    return edges


def apply_bins(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    codes = np.empty(X.shape, dtype=np.int32)
    for j, e in enumerate(edges):
        codes[:, j] = np.searchsorted(e, X[:, j], side="left")
    return codes


@njit(cache=True)
def _build(codes, y, idx, n_bins, max_depth, min_leaf, max_features, seed, shrink):
    """Grow one tree on rows ``idx`` (repeats allowed for bootstrap).

    Returns node arrays plus, for each row position in ``idx``, the value of
    the leaf it ended in (used by boosting to update training predictions).
    """
    np.random.seed(seed)
    m = idx.size
    p = codes.shape[1]
    cap = 2 * m + 1
    feat = np.full(cap, -1, np.int32)
    tbin = np.zeros(cap, np.int32)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    nb_max = 1
    for j in range(p):
        if n_bins[j] > nb_max:
            nb_max = n_bins[j]
    hs = np.zeros(nb_max)
    hc = np.zeros(nb_max, np.int64)
    perm = np.arange(p)
    chosen = np.empty(p, np.int64)
    work = idx.copy()
    leaf_val = np.empty(m)

    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_dep = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_dep[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        dep = st_dep[top]
        cnt = hi - lo
        s = 0.0
        for k in range(lo, hi):
            s += y[work[k]]
        mean = s / cnt
        value[node] = mean * shrink
        best_gain = s * s / cnt
        parent = best_gain
        best_f = -1
        best_b = -1
        if (max_depth < 0 or dep < max_depth) and cnt >= 2 * min_leaf:
            # feature subset, visited in ascending index order
            if max_features < p:
                for j in range(p):
                    perm[j] = j
                for j in range(max_features):
                    r = j + np.random.randint(p - j)
                    tmp = perm[j]
                    perm[j] = perm[r]
                    perm[r] = tmp
                for j in range(max_features):
                    chosen[j] = perm[j]
                chosen[:max_features].sort()
                nf = max_features
            else:
                for j in range(p):
                    chosen[j] = j
                nf = p
            for jj in range(nf):
                f = chosen[jj]
                nb = n_bins[f]
                if nb < 2:
                    continue
                bmin = nb
                bmax = -1
                for k in range(lo, hi):
                    b = codes[work[k], f]
                    if b < bmin:
                        bmin = b
                    if b > bmax:
                        bmax = b
                if bmin == bmax:
                    continue
                for b in range(bmin, bmax + 1):
                    hs[b] = 0.0
                    hc[b] = 0
                for k in range(lo, hi):
                    r = work[k]
                    b = codes[r, f]
                    hs[b] += y[r]
                    hc[b] += 1
                sl = 0.0
                cl = 0
                for b in range(bmin, bmax):
                    sl += hs[b]
                    cl += hc[b]
                    cr = cnt - cl
                    if cl < min_leaf:
                        continue
                    if cr < min_leaf:
                        break
                    sr = s - sl
                    g = sl * sl / cl + sr * sr / cr
                    if g > best_gain:
                        best_gain = g
                        best_f = f
                        best_b = b
        if best_f < 0 or best_gain <= parent + 1e-12 * abs(parent) + 1e-300:
            for k in range(lo, hi):
                leaf_val[k] = value[node]
            continue
        # partition work[lo:hi] on code <= best_b
        i = lo
        j = hi - 1
        while i <= j:
            if codes[work[i], best_f] <= best_b:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        mid = i
        feat[node] = best_f
        tbin[node] = best_b
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        left[node] = ln
        right[node] = rn
        # push right first so the left subtree is numbered depth-first
        st_node[top] = rn
        st_lo[top] = mid
        st_hi[top] = hi
        st_dep[top] = dep + 1
        top += 1
        st_node[top] = ln
        st_lo[top] = lo
        st_hi[top] = mid
        st_dep[top] = dep + 1
        top += 1
    # leaf_val[k] is the leaf value reached by row work[k]
    return feat[:n_nodes], tbin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], work, leaf_val


@njit(cache=True)
def _predict_forest(X, feat, thr, left, right, value, roots, n_trees):
    # tree-outer loop keeps one tree's nodes hot in cache
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(n_trees):
        r0 = roots[t]
        for i in range(n):
            node = r0
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += value[node]
    return out


class TreeArrays:
    """Flat storage for an ensemble: node arrays concatenated, one root per tree."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self._offset = 0
        self.roots = []

    def add(self, feat, thr, left, right, value):
        off = self._offset
        self.roots.append(off)
        self.feature.append(feat)
        self.threshold.append(thr)
        self.left.append(np.where(left >= 0, left + off, -1).astype(np.int32))
        self.right.append(np.where(right >= 0, right + off, -1).astype(np.int32))
        self.value.append(value)
        self._offset += feat.size

    def freeze(self) -> dict:
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.empty(0, dt)  # noqa: E731
        return {
            "feature": cat(self.feature, np.int32),
            "threshold": cat(self.threshold, np.float64),
            "left": cat(self.left, np.int32),
            "right": cat(self.right, np.int32),
            "value": cat(self.value, np.float64),
            "roots": np.asarray(self.roots, dtype=np.int64),
        }


def grow_tree(codes, y, idx, edges, max_depth, min_leaf, max_features, seed, shrink=1.0):
    """Grow one tree; returns (feature, threshold, left, right, value, work, leaf_val)."""
    n_bins = np.array([e.size + 1 for e in edges], dtype=np.int32)
    feat, tbin, left, right, value, work, leaf_val = _build(
        codes, y, idx.astype(np.int64), n_bins,
        -1 if max_depth is None else int(max_depth), int(min_leaf), int(max_features),
        int(seed) % (2**31 - 1), float(shrink),
    )
    thr = np.zeros(feat.size)
    split = feat >= 0
    for k in np.nonzero(split)[0]:
        thr[k] = edges[feat[k]][tbin[k]]
    return feat, thr, left, right, value, work, leaf_val


def predict_arrays(arrays: dict, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
    roots = arrays["roots"]
    k = roots.size if n_trees is None else min(int(n_trees), roots.size)
    return _predict_forest(
        np.ascontiguousarray(X, dtype=np.float64), arrays["feature"], arrays["threshold"],
        arrays["left"], arrays["right"], arrays["value"], roots, k,
    )


def resolve_max_features(max_features, p: int) -> int:
    if max_features is None:
        return p
    if max_features == "third":
        return max(1, math.ceil(p / 3))
    if isinstance(max_features, float):
        return max(1, min(p, math.ceil(max_features * p)))
    return max(1, min(p, int(max_features)))
