"""Sparsemax projection onto the probability simplex and support-size control.

The projection is the closed form ``[v - tau]_+`` where ``tau`` comes from the
descending sort of ``v``.  Scaling the input by a positive multiplier moves
the projection along a ray; larger multipliers give sparser outputs, which is
what :func:`scaling_for_target` exploits to hit an exact support size.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from slm.errors import DegenerateInputError, InvalidInputError

GROW_SLACK = 1e-6
SHRINK_SLACK = 1e-6


class ScalingBranch(enum.Enum):
    SHRINK_SUPPORT = "shrink"
    GROW_SUPPORT = "grow"
    ALREADY_TARGET = "already"


@dataclass(frozen=True)
class SimplexProjection:
    """Result of :func:`sparsemax`.

    Attributes:
        values: non-negative vector summing to one.
        support: sorted indices of the strictly positive entries.
        tau: threshold subtracted from the input before clipping.
        k: support cardinality.
    """

    values: np.ndarray
    support: np.ndarray
    tau: float
    k: int


@dataclass(frozen=True)
class ScalingResult:
    multiplier: float
    branch: ScalingBranch
    epsilon_slack: float = 0.0


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise InvalidInputError("empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector contains non-finite entries")
    return v


def _descending(v: np.ndarray) -> np.ndarray:
    return np.sort(v)[::-1]


def _project(v: np.ndarray, z: np.ndarray) -> SimplexProjection:
    # z is v sorted in descending order
    ks = np.arange(1, v.size + 1, dtype=np.float64)
    taus = (np.cumsum(z) - 1.0) / ks
    # same expression as the output value of the k-th entry, so the last
    # admitted coordinate is guaranteed strictly positive
    cond = z - taus > 0
    k = int(np.flatnonzero(cond)[-1]) + 1
    tau = float(taus[k - 1])
    # tied entries are admitted together, so thresholding on the k-th value
    # recovers exactly the top k without an argsort
    top = np.flatnonzero(v >= z[k - 1])
    values = np.zeros_like(v)
    # a lone survivor can come out as 1 + eps
    values[top] = np.minimum(v[top] - tau, 1.0)
    return SimplexProjection(values=values, support=top, tau=tau, k=k)


def sparsemax(v) -> SimplexProjection:
    """Euclidean projection of ``v`` onto the probability simplex.

    O(d log d): one sort, one cumulative sum.  The support size is the
    largest k with ``1 + k * v_(k) > sum_{i<=k} v_(i)``.
    """
    v = _as_vector(v)
    return _project(v, _descending(v))


def _gap(z: np.ndarray, k: int) -> float:
    # sum_{i<=k} z_(i) - k * z_(k); non-decreasing in k
    return float(np.sum(z[:k]) - k * z[k - 1])


def scaling_for_target(v, target: int, current: SimplexProjection | None = None) -> ScalingResult:
    """Positive multiplier ``m`` such that ``sparsemax(m * v)`` has ``target`` nonzeros.

    Args:
        v: non-uniform input vector.
        target: desired support size, ``1 <= target <= len(v)``.
        current: ``sparsemax(v)`` if the caller already has it.

    A uniform ``v`` with ``target == len(v)`` is already on target.

    Raises:
        DegenerateInputError: if ``v`` is uniform, or ties straddle the
            requested support boundary so that no multiplier separates them.
    """
    v = _as_vector(v)
    return _scaling(v, _descending(v), target, current)


def _scaling(v: np.ndarray, z: np.ndarray, target: int, current: SimplexProjection | None) -> ScalingResult:
    d = v.size
    if not 1 <= target <= d:
        raise InvalidInputError(f"target {target} outside [1, {d}]")
    if current is None:
        current = _project(v, z)
    if current.k == target:
        return ScalingResult(1.0, ScalingBranch.ALREADY_TARGET)
    if np.all(v == v[0]):
        raise DegenerateInputError("uniform vector: scaling cannot change the support")

    if target < d and z[target - 1] == z[target]:
        raise DegenerateInputError(
            f"entries tied at the support boundary; cannot isolate {target} features"
        )
    # support == target exactly for m in [1/gap(target+1), 1/gap(target))
    lo = 1.0 / _gap(z, target + 1) if target < d else 0.0
    hi = 1.0 / _gap(z, target) if target > 1 else np.inf

    if current.k > target:
        m = lo
        if _project(m * v, m * z).k == target:
            return ScalingResult(m, ScalingBranch.SHRINK_SUPPORT)
        # roundoff re-admitted entry target+1: step just past the boundary
        m = lo * (1.0 + SHRINK_SLACK)
        slack = SHRINK_SLACK if m < hi else None
        if slack is None:
            m = 0.5 * (lo + hi)
            slack = m / lo - 1.0
        return _checked(v, z, target, ScalingResult(m, ScalingBranch.SHRINK_SUPPORT, slack))

    m = hi * (1.0 - GROW_SLACK)
    slack = GROW_SLACK if m > lo else None
    if slack is None:
        # near-tie: the valid interval is narrower than the slack
        m = 0.5 * (lo + hi)
        slack = 1.0 - m / hi
    return _checked(v, z, target, ScalingResult(m, ScalingBranch.GROW_SUPPORT, slack))


def _checked(v: np.ndarray, z: np.ndarray, target: int, result: ScalingResult) -> ScalingResult:
    m = result.multiplier
    if _project(m * v, m * z).k != target:
        raise DegenerateInputError(
            f"entries too close to separate at support size {target} in float64"
        )
    return result


def scaled_sparsemax(v, target: int) -> tuple[SimplexProjection, ScalingResult]:
    """Rescale ``v`` per :func:`scaling_for_target`, then project.

    Returns the projection of the scaled vector together with the scaling so
    callers can chain gradients through the (constant) multiplier.
    """
    v = _as_vector(v)
    # a positive multiplier keeps the order, so one sort serves every projection
    z = _descending(v)
    current = _project(v, z)
    scaling = _scaling(v, z, target, current)
    if scaling.branch is ScalingBranch.ALREADY_TARGET:
        return current, scaling
    m = scaling.multiplier
    return _project(m * v, m * z), scaling


def sparsemax_jvp(projection: SimplexProjection, upstream) -> np.ndarray:
    """Product of the sparsemax Jacobian at ``projection`` with ``upstream``.

    The Jacobian is ``diag(s) - s s^T / |S|`` for support indicator ``s``;
    it is symmetric, so this serves as the vector-Jacobian product as well.
    Costs O(|S|) beyond allocating the output.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != projection.values.shape:
        raise InvalidInputError(
            f"upstream shape {upstream.shape} != projection shape {projection.values.shape}"
        )
    if not np.all(np.isfinite(upstream)):
        raise InvalidInputError("upstream contains non-finite entries")
    out = np.zeros_like(upstream)
    s = projection.support
    g = upstream[s]
    out[s] = g - g.mean()
    return out
