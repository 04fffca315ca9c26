"""Fit, factor match scores, clustering accuracy, t-tests and start-agreement checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .tensor import DenseTensor3


def _values(T):
    if isinstance(T, DenseTensor3):
        return T.slices
    return np.asarray(T, dtype=np.float64)


def fit_score(X, Xhat) -> float:
    """``100 * (1 - ||X - Xhat||^2 / ||X||^2)``; negative for models worse than zero."""
    X, Xhat = _values(X), _values(Xhat)
    if X.shape != Xhat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    norm_sq = float(np.dot(X.ravel(), X.ravel()))
    if norm_sq == 0.0:
        raise ValueError("fit is undefined for an all-zero tensor")
    d = (X - Xhat).ravel()
    return 100.0 * (1.0 - float(np.dot(d, d)) / norm_sq)


def congruence(U, V):
    """R x R matrix of absolute cosines between columns of U (rows) and V (columns)."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    nu = np.linalg.norm(U, axis=0)
    nv = np.linalg.norm(V, axis=0)
    if np.any(nu == 0) or np.any(nv == 0):
        raise ValueError("congruence is undefined for an all-zero column")
    return np.abs(U.T @ V) / np.outer(nu, nv)


@dataclass
class ComponentMatching:
    """``permutation[r]`` is the estimated component matched to true component r."""

    permutation: np.ndarray
    scores: np.ndarray  # per true component, product of congruences over modes

    def apply(self, Uhat):
        return np.asarray(Uhat)[:, self.permutation]


def match_components(true_factors, est_factors) -> ComponentMatching:
    """Maximum-weight assignment on the product of per-mode congruences."""
    if len(true_factors) != len(est_factors) or not true_factors:
        raise ValueError("need the same, non-zero number of modes on both sides")
    ranks = {np.shape(F)[1] for F in list(true_factors) + list(est_factors)}
    if len(ranks) != 1:
        raise ValueError(f"rank mismatch between factors: {sorted(ranks)}")
    weight = np.ones((ranks.pop(),) * 2)
    for U, Uhat in zip(true_factors, est_factors):
        weight = weight * congruence(U, Uhat)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    perm = cols[np.argsort(rows)]
    return ComponentMatching(perm, weight[np.arange(len(perm)), perm])


def fms(U, Uhat, matching: ComponentMatching | None = None) -> float:
    """Mean absolute cosine between matched columns of ``U`` and ``Uhat``.

    Without ``matching`` the columns are matched on this mode alone.
    """
    U = np.asarray(U, dtype=np.float64)
    Uhat = np.asarray(Uhat, dtype=np.float64)
    if U.shape != Uhat.shape:
        raise ValueError(f"shape mismatch: {U.shape} vs {Uhat.shape}")
    if matching is None:
        matching = match_components([U], [Uhat])
    cong = congruence(U, matching.apply(Uhat))
    return float(np.mean(np.diag(cong)))


def concat_evolving(Bk, K=None):
    """Stack ``(K, J, R)`` factors into the ``(K*J, R)`` matrix; a single J x R
    matrix (a CP factor) is repeated ``K`` times."""
    Bk = np.asarray(Bk, dtype=np.float64)
    if Bk.ndim == 2:
        if K is None:
            raise ValueError("K is needed to repeat a static factor")
        return np.tile(Bk, (K, 1))
    return Bk.reshape(-1, Bk.shape[-1])


def fms_evolving(Bk_true, Bk_est, matching: ComponentMatching | None = None) -> float:
    """FMS on the time-concatenated evolving factors.

    ``Bk_est`` may be a single J x R matrix (CP), which is repeated K times.
    """
    Bk_true = np.asarray(Bk_true, dtype=np.float64)
    Bk_est = np.asarray(Bk_est, dtype=np.float64)
    if Bk_est.ndim == 2:
        Bk_est = np.broadcast_to(Bk_est, Bk_true.shape)
    if Bk_true.shape != Bk_est.shape:
        raise ValueError(f"shape mismatch: {Bk_true.shape} vs {Bk_est.shape}")
    return fms(concat_evolving(Bk_true), concat_evolving(Bk_est), matching)


def label_accuracy(labels, predicted) -> float:
    """Fraction of agreement under the best one-to-one relabeling of ``predicted``."""
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    _, true_idx = np.unique(labels, return_inverse=True)
    _, pred_idx = np.unique(predicted, return_inverse=True)
    counts = np.zeros((true_idx.max() + 1, pred_idx.max() + 1))
    np.add.at(counts, (true_idx, pred_idx), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum()) / len(labels)


def clustering_accuracy(Ahat, labels, n_clusters, seed=0, n_init=20) -> float:
    """Best k-means accuracy (percent) over every non-empty subset of columns of ``Ahat``."""
    Ahat = np.asarray(Ahat, dtype=np.float64)
    labels = np.asarray(labels)
    if Ahat.ndim != 2 or len(labels) != Ahat.shape[0]:
        raise ValueError("labels must have one entry per row of Ahat")
    if n_clusters > Ahat.shape[0]:
        raise ValueError(f"k={n_clusters} exceeds the number of rows ({Ahat.shape[0]})")
    R = Ahat.shape[1]
    best = 0.0
    for size in range(1, R + 1):
        for cols in itertools.combinations(range(R), size):
            km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=n_init, random_state=seed)
            pred = km.fit_predict(Ahat[:, cols])
            best = max(best, label_accuracy(labels, pred))
    return 100.0 * best


def two_sample_ttest(x, y):
    """Pooled-variance two-sample t-test; returns ``(t, two-sided p)``.

    If the pooled variance is zero: equal means give ``(0, 1)``, unequal
    means give ``(+-inf, 0)``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise ValueError("each sample needs at least two observations")
    df = nx + ny - 2
    diff = x.mean() - y.mean()
    pooled = (((x - x.mean()) ** 2).sum() + ((y - y.mean()) ** 2).sum()) / df
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, diff)), 0.0
    t = diff / np.sqrt(pooled * (1.0 / nx + 1.0 / ny))
    return float(t), float(2.0 * stats.t.sf(abs(t), df))


@dataclass
class UniquenessResult:
    unique: bool
    n_candidates: int
    min_fms: float
    fms: list = field(default_factory=list)  # per candidate: per-mode FMS against the best


def uniqueness_check(runs, fit_window=0.1, threshold=0.99) -> UniquenessResult:
    """Do the starts that reach the best fit agree on their factors?

    ``runs`` is a sequence of ``(fit, factors)`` where ``factors`` lists one
    matrix per mode (evolving modes already concatenated).  Every run within
    ``fit_window`` percentage points of the best must match the best run with
    FMS >= ``threshold`` in every mode.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("uniqueness check needs at least two runs")
    best_idx = max(range(len(runs)), key=lambda i: runs[i][0])
    best_fit, best_factors = runs[best_idx]
    per_run = []
    for i, (fit, factors) in enumerate(runs):
        if i == best_idx or fit < best_fit - fit_window:
            continue
        matching = match_components(best_factors, factors)
        per_run.append([fms(U, V, matching) for U, V in zip(best_factors, factors)])
    min_fms = min((min(s) for s in per_run), default=1.0)
    return UniquenessResult(min_fms >= threshold, len(per_run) + 1, min_fms, per_run)
