"""Learnable feature mask: tempering schedule, refresh, and application."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from slm.errors import DegenerateInputError, InvalidInputError
from slm.simplex import (
    ScalingBranch,
    ScalingResult,
    SimplexProjection,
    scaled_sparsemax,
    sparsemax,
)

log = logging.getLogger(__name__)

N_PLATEAUS = 5


@dataclass(frozen=True)
class TemperingSchedule:
    """Piecewise-constant decay of the selected-feature count.

    ``f0`` features at step 0, stepping down linearly over five plateaus to
    ``fn`` at ``n_tmp`` (default ``n_total // 2``) and staying there.
    """

    f0: int
    fn: int
    n_total: int
    n_tmp: int | None = None

    def __post_init__(self):
        if not 1 <= self.fn <= self.f0:
            raise InvalidInputError(f"need 1 <= fn <= f0, got fn={self.fn}, f0={self.f0}")
        if self.n_total < 0:
            raise InvalidInputError("n_total must be non-negative")
        if self.n_tmp is None:
            object.__setattr__(self, "n_tmp", self.n_total // 2)
        if self.n_tmp < 0:
            raise InvalidInputError("n_tmp must be non-negative")

    @property
    def plateaus(self) -> tuple[int, ...]:
        return tuple(
            int(round(self.f0 - (j / N_PLATEAUS) * (self.f0 - self.fn))) for j in range(N_PLATEAUS)
        )

    @classmethod
    def constant(cls, fn: int, n_total: int) -> "TemperingSchedule":
        """Schedule with tempering switched off."""
        return cls(f0=fn, fn=fn, n_total=n_total, n_tmp=0)


def target_count_at(schedule: TemperingSchedule, t: int) -> int:
    if not 0 <= t <= schedule.n_total:
        raise InvalidInputError(f"step {t} outside [0, {schedule.n_total}]")
    if t >= schedule.n_tmp:
        return schedule.fn
    j = (N_PLATEAUS * t) // schedule.n_tmp
    return schedule.plateaus[j]


@dataclass
class MaskState:
    """The learnable mask argument and its current sparse projection.

    ``multiplier`` is the scaling applied before projection; gradients treat
    it as a constant.  ``degenerate`` flags a refresh that could not scale
    (uniform argument) and fell back to plain sparsemax.
    """

    argument: np.ndarray
    sparse: SimplexProjection
    target_count: int
    step: int = 0
    multiplier: float = 1.0
    degenerate: bool = False

    @classmethod
    def initial(cls, d: int) -> "MaskState":
        argument = np.ones(d)
        return cls(argument=argument, sparse=sparsemax(argument), target_count=d)

    @property
    def probabilities(self) -> np.ndarray:
        return self.sparse.values

    @property
    def selected(self) -> np.ndarray:
        return self.sparse.support


def refresh_mask(
    state: MaskState, t: int, schedule: TemperingSchedule, scaling: bool = True
) -> MaskState:
    """Recompute the sparse mask for step ``t``; the argument is untouched.

    With ``scaling=False`` the argument is projected as is, so the support
    size is whatever sparsemax gives (the no-scaling ablation).
    """
    if not np.all(np.isfinite(state.argument)):
        raise InvalidInputError("mask argument contains non-finite entries")
    target = target_count_at(schedule, t)
    degenerate = False
    if not scaling:
        sparse, result = sparsemax(state.argument), ScalingResult(1.0, ScalingBranch.ALREADY_TARGET)
    else:
        try:
            sparse, result = scaled_sparsemax(state.argument, target)
        except DegenerateInputError as exc:
            log.warning("mask refresh at step %d: %s; using unscaled sparsemax", t, exc)
            sparse, result = sparsemax(state.argument), ScalingResult(1.0, ScalingBranch.ALREADY_TARGET)
            degenerate = True
    return replace(
        state,
        sparse=sparse,
        target_count=target,
        step=t,
        multiplier=result.multiplier,
        degenerate=degenerate,
    )


def apply_mask(x: np.ndarray, sparse: SimplexProjection | np.ndarray) -> np.ndarray:
    """Row-wise elementwise product ``x * m_sp``; unselected columns come out exactly 0."""
    values = sparse.values if isinstance(sparse, SimplexProjection) else np.asarray(sparse)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != values.shape[0]:
        raise InvalidInputError(f"matrix shape {x.shape} does not match mask length {values.shape[0]}")
    out = x * values
    out[:, values == 0] = 0.0  # avoid -0.0 from negative inputs
    return out
