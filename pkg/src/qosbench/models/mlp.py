"""Dense ReLU regressor trained with Adam on an absolute-error loss."""
from __future__ import annotations

import math
import warnings

import numpy as np


def init_weights(sizes, rng):
    # uniform in +-sqrt(6 / fan_in)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / fan_in)
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def forward(Ws, bs, X):
    h = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    return (h @ Ws[-1] + bs[-1])[:, 0]


def _grads(Ws, bs, X, y):
    acts = [X]
    h = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    out = (h @ Ws[-1] + bs[-1])[:, 0]
    g = (np.sign(out - y) / y.size)[:, None]
    gW, gb = [None] * len(Ws), [None] * len(bs)
    for k in range(len(Ws) - 1, -1, -1):
        gW[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        if k:
            g = (g @ Ws[k].T) * (acts[k] > 0)
    return gW, gb


def train_mlp(X, y, hidden=(256, 128, 64, 32), lr=1e-3, batch_size=16, patience=8,
              max_epochs=200, val_fraction=0.1, seed=0):
    """Fit on standardized inputs/targets; early-stop on the trailing validation slice.

    Returns a dict with weights, the scalers and the per-epoch validation
    history (in target units); weights are those of the best epoch.
    """
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    if n < batch_size:
        warnings.warn(f"MLP: {n} training rows < batch size {batch_size}; clamping batch", RuntimeWarning,
                      stacklevel=2)
        batch_size = max(1, n)
    n_val = int(math.floor(val_fraction * n))
    if n - n_val < 1:
        n_val = 0
    Xtr, ytr = X[: n - n_val], y[: n - n_val]
    Xva, yva = X[n - n_val :], y[n - n_val :]
    x_mu = Xtr.mean(axis=0)
    x_sd = Xtr.std(axis=0)
    x_sd[x_sd == 0] = 1.0
    y_mu = float(ytr.mean())
    y_sd = float(ytr.std()) or 1.0
    Ztr = (Xtr - x_mu) / x_sd
    ttr = (ytr - y_mu) / y_sd
    Zva = (Xva - x_mu) / x_sd

    sizes = [X.shape[1], *hidden, 1]
    Ws, bs = init_weights(sizes, rng)
    mW = [np.zeros_like(w) for w in Ws]
    vW = [np.zeros_like(w) for w in Ws]
    mb = [np.zeros_like(b) for b in bs]
    vb = [np.zeros_like(b) for b in bs]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0

    def val_error(Ws, bs):
        if n_val == 0:
            return float(np.mean(np.abs(forward(Ws, bs, Ztr) * y_sd + y_mu - ytr)))
        return float(np.mean(np.abs(forward(Ws, bs, Zva) * y_sd + y_mu - yva)))

    best = val_error(Ws, bs)
    best_W = [w.copy() for w in Ws]
    best_b = [b.copy() for b in bs]
    best_epoch = 0
    history = []
    since = 0
    m = Ztr.shape[0]
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            sel = order[start : start + batch_size]
            gW, gb = _grads(Ws, bs, Ztr[sel], ttr[sel])
            step += 1
            c1 = 1 - b1**step
            c2 = 1 - b2**step
            for k in range(len(Ws)):
                mW[k] = b1 * mW[k] + (1 - b1) * gW[k]
                vW[k] = b2 * vW[k] + (1 - b2) * gW[k] ** 2
                Ws[k] -= lr * (mW[k] / c1) / (np.sqrt(vW[k] / c2) + eps)
                mb[k] = b1 * mb[k] + (1 - b1) * gb[k]
                vb[k] = b2 * vb[k] + (1 - b2) * gb[k] ** 2
                bs[k] -= lr * (mb[k] / c1) / (np.sqrt(vb[k] / c2) + eps)
        err = val_error(Ws, bs)
        history.append(err)
        if err < best:
            best, best_epoch, since = err, epoch, 0
            best_W = [w.copy() for w in Ws]
            best_b = [b.copy() for b in bs]
        else:
            since += 1
            if since >= patience:
                break
    return {
        "weights": best_W, "biases": best_b,
        "x_mean": x_mu, "x_std": x_sd, "y_mean": y_mu, "y_std": y_sd,
        "val_history": np.asarray(history), "best_epoch": best_epoch, "best_val": best,
    }


def predict_mlp(params, X):
    Z = (X - params["x_mean"]) / params["x_std"]
    return forward(params["weights"], params["biases"], Z) * params["y_std"] + params["y_mean"]
