"""Mutual-information-maximizing loss terms.

The quadratic error of a probabilistic classifier is minimized exactly when
its predictions equal the conditional label distribution, and at that point
it equals ``1 - sum_y P(y)^2 - I_q``, so driving it down drives the
quadratic MI surrogate ``I_q`` up.  The consistency regularizer adds a
pairwise penalty for samples whose *selected* features might coincide.

All gradients here are with respect to the unweighted terms; the caller
applies loss weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from slm.errors import InvalidInputError

log = logging.getLogger(__name__)

DIFF_TOL = 1e-9
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class PredictionBatch:
    """Model outputs for one batch.

    Exactly one of ``probs`` (b x c, classification) or ``outputs`` (b,
    regression) is set.
    """

    labels: np.ndarray
    probs: np.ndarray | None = None
    outputs: np.ndarray | None = None

    @property
    def is_classification(self) -> bool:
        return self.probs is not None

    def own(self) -> np.ndarray:
        """Prediction at each sample's own label: ``R(x_i, y_i)`` or ``R(x_i)``."""
        if self.probs is not None:
            return self.probs[np.arange(len(self.labels)), self.labels.astype(int)]
        return np.asarray(self.outputs, dtype=np.float64)


@dataclass(frozen=True)
class LossBreakdown:
    task_loss: float
    mi_error: float
    r_cs: float
    combined: float
    mi_weight: float
    task_weight: float = 1.0

    @staticmethod
    def combine(task_loss, mi_error, r_cs, mi_weight, task_weight=1.0) -> "LossBreakdown":
        combined = task_weight * task_loss + mi_weight * (mi_error + r_cs)
        return LossBreakdown(
            float(task_loss), float(mi_error), float(r_cs), float(combined), mi_weight, task_weight
        )


def _check_probs(probs: np.ndarray, labels: np.ndarray) -> None:
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise InvalidInputError(f"probs shape {probs.shape} does not match {labels.shape[0]} labels")
    if np.any(probs < -ROW_SUM_TOL) or np.any(probs > 1 + ROW_SUM_TOL):
        raise InvalidInputError("probabilities outside [0, 1]")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=ROW_SUM_TOL, rtol=0):
        raise InvalidInputError("probability rows do not sum to 1")


def quadratic_error(batch: PredictionBatch) -> float:
    """Batch mean of ``(1 - R(x_i, y_i))^2 + sum_{y != y_i} R(x_i, y)^2``."""
    probs = np.asarray(batch.probs, dtype=np.float64)
    labels = np.asarray(batch.labels)
    _check_probs(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels.astype(int)] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def quadratic_error_grad(batch: PredictionBatch) -> np.ndarray:
    probs = np.asarray(batch.probs, dtype=np.float64)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(batch.labels)), batch.labels.astype(int)] = 1.0
    return 2.0 * (probs - onehot) / probs.shape[0]


# --- consistency regularizer -------------------------------------------------


def _equal_entries(x: np.ndarray, tol: float) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Sample pairs ``(i1 < i2)`` with ``|x[i1, j] - x[i2, j]| <= tol``, grouped by column j.

    Sorting each column turns the O(b^2 d) pairwise scan into O(b d log b)
    when (as for continuous features) almost no pairs coincide.
    """
    b, d = x.shape
    if b < 2:
        return []
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    close = np.diff(xs, axis=0) <= tol
    out = []
    for j in np.flatnonzero(close.any(axis=0)):
        # runs of adjacent close values; only members of one run can match
        starts = np.flatnonzero(np.concatenate(([True], ~close[:, j])))
        ends = np.append(starts[1:], b)
        rows1, rows2 = [], []
        for s, e in zip(starts, ends):
            if e - s < 2:
                continue
            idx = order[s:e, j]
            vals = x[idx, j]
            a, c = np.triu_indices(e - s, k=1)
            keep = np.abs(vals[a] - vals[c]) <= tol
            i1, i2 = idx[a[keep]], idx[c[keep]]
            rows1.append(np.minimum(i1, i2))
            rows2.append(np.maximum(i1, i2))
        if rows1:
            out.append((np.concatenate(rows1), np.concatenate(rows2), int(j)))
    return out


@dataclass(frozen=True)
class ConsistencyTerms:
    value: float
    grad_own: np.ndarray
    grad_p: np.ndarray


def consistency_terms(
    x: np.ndarray,
    own: np.ndarray,
    p: np.ndarray,
    *,
    support_only: bool = False,
    reduction: str = "sum",
    tol: float = DIFF_TOL,
) -> ConsistencyTerms:
    """Consistency regularizer and its gradients.

    ``sum_{i1 < i2} prod_{j : x_i1j != x_i2j} (1 - p_j) * (own_i1 - own_i2)^2``

    Args:
        x: raw (unmasked) feature batch, b x d.
        own: per-sample prediction at its own label (or regression output).
        p: per-feature selection probabilities in [0, 1].
        support_only: restrict the product to features with ``p_j > 0``.
            The value is unchanged (those factors are 1); only the gradient
            with respect to unselected ``p_j`` is dropped.
        reduction: ``"sum"`` over pairs, or ``"mean"`` (divided by the pair count).
    """
    x = np.asarray(x, dtype=np.float64)
    own = np.asarray(own, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    b, d = x.shape
    if p.shape != (d,):
        raise InvalidInputError(f"p has shape {p.shape}, expected ({d},)")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InvalidInputError("feature probabilities must lie in [0, 1]")
    if reduction not in ("sum", "mean"):
        raise InvalidInputError(f"unknown reduction {reduction!r}")
    grad_p = np.zeros(d)
    if b < 2:
        log.warning("consistency regularizer needs at least 2 samples; got %d", b)
        return ConsistencyTerms(0.0, np.zeros(b), grad_p)

    cols = np.flatnonzero(p > 0) if support_only else np.arange(d)
    pc = p[cols]
    hard = pc >= 1.0  # factor (1 - p_j) == 0
    logs = np.where(hard, 0.0, np.log1p(-np.where(hard, 0.0, pc)))

    # Pairs that differ in every column share one product, so their total is
    # that product times sum_{i<k} (own_i - own_k)^2 = b * sum (own - mean)^2.
    # Only the (usually few) pairs with a coinciding entry need their own terms.
    log_all = logs.sum()
    n_hard = int(hard.sum())
    base0 = np.exp(log_all) if n_hard == 0 else 0.0
    base1 = np.exp(log_all) if n_hard == 1 else 0.0
    w_all = b * np.sum((own - own.mean()) ** 2)

    equal = _equal_entries(x[:, cols], tol)
    if equal:
        keys = np.concatenate([i1 * b + i2 for i1, i2, _ in equal])
        entry_col = np.concatenate([np.full(i1.size, j) for i1, _, j in equal])
        pair_keys, entry_pair = np.unique(keys, return_inverse=True)
        L = np.full(pair_keys.size, log_all)
        Z = np.full(pair_keys.size, float(n_hard))
        np.subtract.at(L, entry_pair, logs[entry_col])
        np.subtract.at(Z, entry_pair, hard[entry_col].astype(float))
        g1, g2 = np.divmod(pair_keys, b)
        w = (own[g1] - own[g2]) ** 2
        expL = np.exp(L)
        prob0 = np.where(Z == 0, expL, 0.0)
        prob1 = np.where(Z == 1, expL, 0.0)
    else:
        entry_col = entry_pair = g1 = g2 = np.zeros(0, dtype=int)
        w = prob0 = prob1 = np.zeros(0)

    scale = 1.0 / (b * (b - 1) / 2) if reduction == "mean" else 1.0
    # weight carried by the pairs that differ everywhere; exactly 0 if none do
    w_rest = max(w_all - float(w.sum()), 0.0) if w.size < b * (b - 1) // 2 else 0.0
    total0 = base0 * w_rest + float(np.sum(prob0 * w))
    value = total0 * scale

    grad_own = 2.0 * base0 * (b * own - own.sum())
    push = 2.0 * (prob0 - base0) * (own[g1] - own[g2])
    np.add.at(grad_own, g1, push)
    np.subtract.at(grad_own, g2, push)
    grad_own *= scale

    # d/dp_j: pairs differing at j lose the factor (1 - p_j)
    eq0 = np.bincount(entry_col, weights=(prob0 * w)[entry_pair], minlength=cols.size)
    g = np.zeros(cols.size)
    soft = ~hard
    g[soft] = -(total0 - eq0[soft]) / (1.0 - pc[soft])
    if n_hard:
        total1 = base1 * w_rest + float(np.sum(prob1 * w))
        eq1 = np.bincount(entry_col, weights=(prob1 * w)[entry_pair], minlength=cols.size)
        g[hard] = -(total1 - eq1[hard])
    grad_p[cols] = g * scale
    return ConsistencyTerms(value, grad_own, grad_p)


def consistency_regularizer(x, batch: PredictionBatch, p, **kwargs) -> float:
    return consistency_terms(x, batch.own(), p, **kwargs).value


def mi_objective(
    x,
    batch: PredictionBatch,
    p,
    mi_weight: float = 1.0,
    task_loss: float = 0.0,
    task_weight: float = 1.0,
    rcs: bool = True,
    **kwargs,
) -> LossBreakdown:
    """Quadratic error plus consistency term, combined with a task loss."""
    if batch.is_classification:
        err = quadratic_error(batch)
    else:
        err = float(np.mean((np.asarray(batch.labels) - batch.outputs) ** 2))
    r = consistency_regularizer(x, batch, p, **kwargs) if rcs else 0.0
    return LossBreakdown.combine(task_loss, err, r, mi_weight, task_weight)


def mi_objective_regression(x, outputs, labels, p, rcs: bool = True, **kwargs) -> float:
    """Mean squared error plus the consistency term on raw outputs."""
    batch = PredictionBatch(labels=np.asarray(labels, dtype=np.float64), outputs=np.asarray(outputs))
    bd = mi_objective(x, batch, p, rcs=rcs, **kwargs)
    return bd.mi_error + bd.r_cs


@dataclass(frozen=True)
class MILossGrads:
    mi_error: float
    r_cs: float
    grad_pred: np.ndarray  # w.r.t. probs (b x c) or outputs (b,)
    grad_p: np.ndarray


def miloss_gradients(x, batch: PredictionBatch, p, rcs: bool = True, **kwargs) -> MILossGrads:
    """Value and gradient of ``E = error + r_cs`` w.r.t. predictions and ``p``."""
    b = len(batch.labels)
    if batch.is_classification:
        err = quadratic_error(batch)
        g_pred = quadratic_error_grad(batch)
    else:
        resid = np.asarray(batch.outputs, dtype=np.float64) - np.asarray(batch.labels, dtype=np.float64)
        err = float(np.mean(resid**2))
        g_pred = 2.0 * resid / b
    if not rcs:
        return MILossGrads(err, 0.0, g_pred, np.zeros(np.asarray(p).shape[0]))
    terms = consistency_terms(x, batch.own(), p, **kwargs)
    if batch.is_classification:
        g_pred = g_pred.copy()
        g_pred[np.arange(b), batch.labels.astype(int)] += terms.grad_own
    else:
        g_pred = g_pred + terms.grad_own
    return MILossGrads(err, terms.value, g_pred, terms.grad_p)


# --- population quantities (verification and diagnostics) -------------------


def _check_joint(joint) -> np.ndarray:
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2:
        raise InvalidInputError("joint distribution must be a 2-D table")
    if np.any(joint < 0) or not np.isclose(joint.sum(), 1.0, atol=1e-9, rtol=0):
        raise InvalidInputError("joint distribution must be non-negative and sum to 1")
    return joint


def quadratic_mi(joint) -> float:
    """``sum_{x,y} P(x,y)^2 / P(x) - sum_y P(y)^2`` for a joint table indexed [x, y]."""
    joint = _check_joint(joint)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = px > 0
    return float(np.sum(joint[nz] ** 2 / px[nz, None]) - np.sum(py**2))


def mutual_information(joint) -> float:
    """Plug-in mutual information in nats."""
    joint = _check_joint(joint)
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px * py)[nz])))


def expected_quadratic_error(joint, predictions) -> float:
    """Population quadratic error of ``predictions[x, y] = R(x, y)`` under ``joint``."""
    joint = _check_joint(joint)
    R = np.asarray(predictions, dtype=np.float64)
    ny = joint.shape[1]
    eye = np.eye(ny)
    # per (x, y): sum_y' (R(x, y') - 1[y' == y])^2
    per = ((R[:, None, :] - eye[None, :, :]) ** 2).sum(axis=2)
    return float(np.sum(joint * per))


def optimal_predictions(joint) -> np.ndarray:
    """``R*(x, y) = P(x, y) / P(x)``; rows with ``P(x) = 0`` are left uniform."""
    joint = _check_joint(joint)
    px = joint.sum(axis=1, keepdims=True)
    return np.where(px > 0, joint / np.where(px > 0, px, 1.0), 1.0 / joint.shape[1])


# --- HSIC alternative --------------------------------------------------------


def _sq_dists(z: np.ndarray) -> np.ndarray:
    sq = np.sum(z * z, axis=1)
    return np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)


def median_sigma(z: np.ndarray) -> float:
    """Median of positive pairwise Euclidean distances; 1.0 if there are none."""
    z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
    dist = np.sqrt(_sq_dists(z)[np.triu_indices(len(z), k=1)])
    dist = dist[dist > 0]
    return float(np.median(dist)) if dist.size else 1.0


@dataclass(frozen=True)
class HSICTerms:
    value: float  # negative HSIC, for minimization
    grad_x: np.ndarray


def hsic_terms(x, y, sigma_x: float | None = None, sigma_y: float | None = None) -> HSICTerms:
    """Negative biased empirical HSIC with Gaussian kernels and its gradient in ``x``.

    ``HSIC = tr(K H L H) / (b - 1)^2`` with centering matrix ``H``.  Bandwidths
    default to the median pairwise distance and are held constant when
    differentiating.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    b = x.shape[0]
    if b < 2:
        raise InvalidInputError("HSIC needs at least 2 samples")
    if y.shape[0] != b:
        raise InvalidInputError("x and y have different sample counts")
    sx = median_sigma(x) if sigma_x is None else float(sigma_x)
    sy = median_sigma(y) if sigma_y is None else float(sigma_y)
    if sx <= 0 or sy <= 0:
        raise InvalidInputError("kernel bandwidths must be positive")
    K = np.exp(-_sq_dists(x) / (2.0 * sx * sx))
    L = np.exp(-_sq_dists(y) / (2.0 * sy * sy))
    Lc = L - L.mean(axis=0, keepdims=True)
    Lc = Lc - Lc.mean(axis=1, keepdims=True)  # H L H
    norm = 1.0 / (b - 1) ** 2
    hsic = float(np.sum(K * Lc)) * norm
    A = Lc * K * norm
    grad = -(2.0 / (sx * sx)) * (A.sum(axis=1)[:, None] * x - A @ x)
    return HSICTerms(-hsic, -grad)


def hsic_gaussian(x_masked, y, sigma_x: float | None = None, sigma_y: float | None = None) -> float:
    return hsic_terms(x_masked, y, sigma_x, sigma_y).value
