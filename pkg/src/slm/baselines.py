"""Filter-style feature rankings used as comparison baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slm.data import Dataset, bin_labels
from slm.errors import InvalidInputError
from slm.train import train_predictor

METHODS = ("fisher", "anova", "binned_mi", "linear")


@dataclass(frozen=True)
class FeatureScores:
    scores: np.ndarray
    method: str

    def top_k(self, k: int) -> np.ndarray:
        """Indices of the ``k`` highest scores; ties go to the lower index."""
        if not 1 <= k <= self.scores.size:
            raise InvalidInputError(f"k={k} outside [1, {self.scores.size}]")
        return np.sort(np.argsort(-self.scores, kind="stable")[:k])


def _classes(y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y)
    labels, inverse = np.unique(y, return_inverse=True)
    return labels, inverse


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInputError(f"x shape {x.shape} incompatible with {y.shape[0]} labels")
    if x.shape[0] < 2:
        raise InvalidInputError("need at least two samples")
    return x, y


def _group_stats(x, y):
    _, inv = _classes(y)
    k = inv.max() + 1
    counts = np.bincount(inv, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, inv, x)
    means = sums / counts[:, None]
    sq = np.zeros((k, x.shape[1]))
    np.add.at(sq, inv, (x - means[inv]) ** 2)
    return counts, means, sq  # sq: within-class sum of squares


def fisher_score(x, y) -> FeatureScores:
    """``sum_c n_c (mu_cj - mu_j)^2 / sum_c n_c var_cj``; 0 where the denominator vanishes."""
    x, y = _check(x, y)
    counts, means, sq = _group_stats(x, y)
    between = np.sum(counts[:, None] * (means - x.mean(axis=0)) ** 2, axis=0)
    within = sq.sum(axis=0)  # == sum_c n_c * var_c
    scores = np.divide(between, within, out=np.zeros_like(between), where=within > 0)
    return FeatureScores(scores, "fisher")


def anova_f(x, y) -> FeatureScores:
    """One-way ANOVA F statistic per feature."""
    x, y = _check(x, y)
    counts, means, sq = _group_stats(x, y)
    k, n = len(counts), x.shape[0]
    if k < 2 or n <= k:
        return FeatureScores(np.zeros(x.shape[1]), "anova")
    ms_between = np.sum(counts[:, None] * (means - x.mean(axis=0)) ** 2, axis=0) / (k - 1)
    ms_within = sq.sum(axis=0) / (n - k)
    scores = np.divide(ms_between, ms_within, out=np.zeros_like(ms_between), where=ms_within > 0)
    return FeatureScores(scores, "anova")


def _plugin_mi(a: np.ndarray, b: np.ndarray) -> float:
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa * pb)[nz])))


def binned_mi(x, y, n_bins: int = 10, regression: bool = False) -> FeatureScores:
    """Plug-in MI (nats) between each equal-frequency-binned feature and the label."""
    x, y = _check(x, y)
    if regression:
        yd = bin_labels(y, n_bins)
    else:
        yd = _classes(y)[1]
    scores = np.array([_plugin_mi(bin_labels(x[:, j], n_bins), yd) for j in range(x.shape[1])])
    return FeatureScores(np.maximum(scores, 0.0), "binned_mi")


def linear_coef(
    x,
    y,
    regression: bool = False,
    n_iter: int = 500,
    lr: float = 0.5,
) -> FeatureScores:
    """Absolute coefficients of an unregularized linear fit on standardized features.

    Least squares for regression; one-vs-rest logistic regression fitted by
    full-batch gradient descent for classification (max over classes).
    """
    x, y = _check(x, y)
    sd = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    n, d = z.shape
    if regression:
        A = np.column_stack([z, np.ones(n)])
        coef = np.linalg.lstsq(A, np.asarray(y, dtype=np.float64), rcond=None)[0][:d]
        return FeatureScores(np.abs(coef), "linear")
    _, inv = _classes(y)
    k = inv.max() + 1
    targets = np.eye(k)[inv]
    if k == 2:
        targets = targets[:, 1:]
    W = np.zeros((d, targets.shape[1]))
    b = np.zeros(targets.shape[1])
    for _ in range(n_iter):
        p = 1.0 / (1.0 + np.exp(-(z @ W + b)))
        g = (p - targets) / n
        W -= lr * (z.T @ g)
        b -= lr * g.sum(axis=0)
    return FeatureScores(np.abs(W).max(axis=1), "linear")


def score_features(method: str, x, y, regression: bool = False) -> FeatureScores:
    if method in ("fisher", "anova") and regression:
        y = bin_labels(y, 10)
    if method == "fisher":
        return fisher_score(x, y)
    if method == "anova":
        return anova_f(x, y)
    if method == "binned_mi":
        return binned_mi(x, y, regression=regression)
    if method == "linear":
        return linear_coef(x, y, regression=regression)
    raise InvalidInputError(f"unknown baseline {method!r}; choose from {', '.join(METHODS)}")


def random_k(d: int, k: int, seed: int = 0) -> np.ndarray:
    if not 1 <= k <= d:
        raise InvalidInputError(f"k={k} outside [1, {d}]")
    return np.sort(np.random.default_rng(seed).choice(d, size=k, replace=False))


def select(method: str, ds: Dataset, k: int) -> np.ndarray:
    """Top-``k`` columns by ``method`` scored on the training split."""
    x, y = ds.part("train")
    return score_features(method, x, y, regression=ds.task == "regression").top_k(k)


def evaluate_selection(ds: Dataset, indices, cfg) -> dict[str, dict[str, float]]:
    """Train the MLP on only ``indices`` and report per-split metrics."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise InvalidInputError("empty feature selection")
    _, metrics, _ = train_predictor(ds, cfg, columns=indices)
    return metrics
