"""Train/test split strategies for correlated drive traces, and a 2-D PCA diagnostic."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STRATEGIES = ("random", "time", "run", "folds")
DEFAULT_TRAIN_FRACTION = {"random": 0.7, "time": 0.5, "run": 0.7, "folds": 0.7}
N_FOLDS = 10


@dataclass(frozen=True)
class SplitAssignment:
    """Per-run boolean masks, ``True`` meaning train, aligned with the input runs."""

    strategy: str
    train_fraction: float
    masks: tuple[np.ndarray, ...]
    skipped: tuple[str, ...] = field(default=())

    @property
    def labels(self) -> np.ndarray:
        if not self.masks:
            return np.empty(0, dtype=object)
        flat = np.concatenate(self.masks)
        return np.where(flat, "train", "test").astype(object)

    @property
    def achieved_fraction(self) -> float:
        flat = np.concatenate(self.masks) if self.masks else np.empty(0, bool)
        return float(flat.mean()) if flat.size else float("nan")

    def to_csv(self, runs: Sequence, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run_id", "t_ms", "label"])
            for run, mask in zip(runs, self.masks):
                for t, m in zip(run.frame["t_ms"].to_numpy(), mask):
                    w.writerow([run.run_id, int(t), "train" if m else "test"])


def fold_bounds(n: int, n_folds: int = N_FOLDS) -> np.ndarray:
    """Start offsets of ``n_folds`` contiguous folds whose lengths differ by at most one."""
    sizes = np.full(n_folds, n // n_folds)
    sizes[: n % n_folds] += 1
    return np.r_[0, np.cumsum(sizes)]


def _random(sizes, tf, rng):
    total = int(sum(sizes))
    n_train = int(round(tf * total))
    flat = np.zeros(total, dtype=bool)
    flat[rng.permutation(total)[:n_train]] = True
    return np.split(flat, np.cumsum(sizes)[:-1]) if sizes else []


def _time(sizes, tf):
    out = []
    for n in sizes:
        m = np.zeros(n, dtype=bool)
        m[: int(round(tf * n))] = True
        out.append(m)
    return out


def _by_run(runs, tf, rng):
    groups: dict[str, int] = {}
    for r in runs:
        groups[r.run_id] = groups.get(r.run_id, 0) + len(r)
    ids = list(groups)
    order = rng.permutation(len(ids))
    # largest first; the shuffle decides among equal sizes
    ids = sorted((ids[i] for i in order), key=lambda k: -groups[k])
    n_train = n_test = 0
    side: dict[str, bool] = {}
    for k in ids:
        # give the run to whichever side lags its target share more
        if n_train / tf <= n_test / (1.0 - tf):
            side[k] = True
            n_train += groups[k]
        else:
            side[k] = False
            n_test += groups[k]
    if len(ids) > 1 and (n_train == 0 or n_test == 0):
        # never leave one side empty when two or more runs exist
        smallest = ids[-1]
        side[smallest] = not side[smallest]
    return [np.full(len(r), side[r.run_id], dtype=bool) for r in runs]


def _folds(runs, tf, rng):
    masks, skipped = [], []
    n_train_folds = int(round(tf * N_FOLDS))
    for r in runs:
        n = len(r)
        if n < N_FOLDS:
            skipped.append(f"{r.run_id}/{r.device_id}")
            masks.append(np.ones(n, dtype=bool))
            continue
        bounds = fold_bounds(n)
        test_folds = rng.choice(N_FOLDS, size=N_FOLDS - n_train_folds, replace=False)
        m = np.ones(n, dtype=bool)
        for f in test_folds:
            m[bounds[f] : bounds[f + 1]] = False
        masks.append(m)
    if skipped:
        warnings.warn(f"folds split: {len(skipped)} run(s) shorter than {N_FOLDS} samples kept whole in train",
                      RuntimeWarning, stacklevel=3)
    return masks, skipped


def split(runs: Sequence, strategy: str, train_fraction: float | None = None, seed: int = 0) -> SplitAssignment:
    """Label every sample of ``runs`` as train or test.

    ``random`` draws exactly ``round(f*N)`` train samples; ``time`` keeps the
    first share of each run; ``run`` keeps whole drives together (all devices
    of a ``run_id`` on one side); ``folds`` cuts each run into ten contiguous
    folds and sends a seeded choice of them to test.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown split strategy {strategy!r}; expected one of {STRATEGIES}")
    if not runs:
        raise ValueError("no runs to split")
    tf = DEFAULT_TRAIN_FRACTION[strategy] if train_fraction is None else float(train_fraction)
    if not 0.0 < tf < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), STRATEGIES.index(strategy)]))
    sizes = [len(r) for r in runs]
    skipped: list[str] = []
    if strategy == "random":
        masks = _random(sizes, tf, rng)
    elif strategy == "time":
        masks = _time(sizes, tf)
    elif strategy == "run":
        masks = _by_run(runs, tf, rng)
    else:
        masks, skipped = _folds(runs, tf, rng)
    return SplitAssignment(strategy=strategy, train_fraction=tf, masks=tuple(masks), skipped=tuple(skipped))


# --------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaProjection:
    components: np.ndarray  # (2, p_kept) loading vectors
    explained_variance_ratio: np.ndarray
    train_points: np.ndarray
    test_points: np.ndarray
    columns: tuple = ()
    dropped: tuple = ()

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pc1", "pc2", "set"])
            for name, pts in (("train", self.train_points), ("test", self.test_points)):
                for a, b in pts:
                    w.writerow([repr(float(a)), repr(float(b)), name])


def pca_project(train_features, test_features) -> PcaProjection:
    """Project train and test rows onto the top two principal axes of the standardized train data."""
    cols = tuple(getattr(train_features, "columns", range(np.shape(train_features)[1])))
    A = np.asarray(train_features, dtype=float)
    B = np.asarray(test_features, dtype=float)
    if A.ndim != 2 or A.shape[1] < 2 or A.shape[0] < 3:
        raise ValueError("need at least 2 features and 3 training samples")
    if B.ndim != 2 or B.shape[1] != A.shape[1]:
        raise ValueError("train and test feature counts differ")
    mu = A.mean(axis=0)
    sd = A.std(axis=0, ddof=1)
    keep = sd > 0
    dropped = tuple(c for c, k in zip(cols, keep) if not k)
    if dropped:
        warnings.warn(f"PCA: dropping zero-variance columns {list(dropped)}", RuntimeWarning, stacklevel=2)
    if keep.sum() < 2:
        raise ValueError("fewer than two non-degenerate feature columns")
    Za = (A[:, keep] - mu[keep]) / sd[keep]
    Zb = (B[:, keep] - mu[keep]) / sd[keep]
    cov = np.cov(Za, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # sign convention: largest-magnitude loading positive
    for k in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, k]))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    W = vecs[:, :2]
    ratio = vals / vals.sum()
    return PcaProjection(
        components=W.T.copy(), explained_variance_ratio=ratio[:2],
        train_points=Za @ W, test_points=Zb @ W,
        columns=tuple(c for c, k in zip(cols, keep) if k), dropped=dropped,
    )
