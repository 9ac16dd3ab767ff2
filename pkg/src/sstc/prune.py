"""Structured magnitude pruning to the (N, K) sub-vector sparsity pattern.

Each length-n sub-vector of the weight matrix keeps its k largest-magnitude
positions (ties break to the lowest index) and the rest are masked to zero.
Column orientation groups n consecutive rows within a column; row
orientation groups n consecutive columns within a row.
"""

from dataclasses import dataclass

import numpy as np

from .codes import CodeParams
from .errors import ValidationError

ORIENTATIONS = ("column", "row")


def _check_orientation(orientation: str):
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")


def structured_prune(W, params: CodeParams, orientation: str = "column") -> np.ndarray:
    """Boolean mask keeping the k largest magnitudes of every sub-vector.

    Returns a uint8 matrix of W's shape with exactly k ones per length-n
    group.  Requires the grouped dimension to be divisible by n.
    """
    _check_orientation(orientation)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValidationError(f"expected a matrix, got ndim={W.ndim}")
    rows, cols = W.shape
    n, k = params.n, params.k
    if orientation == "column":
        if rows % n:
            raise ValidationError(f"row count {rows} not divisible by n={n} for column orientation")
        # (group, position, col): consecutive rows within each column
        mags = np.abs(W).reshape(rows // n, n, cols).transpose(0, 2, 1)
    else:
        if cols % n:
            raise ValidationError(f"column count {cols} not divisible by n={n} for row orientation")
        mags = np.abs(W).reshape(rows, cols // n, n)
    # stable sort on descending magnitude keeps the lowest index on ties
    order = np.argsort(-mags, axis=-1, kind="stable")
    keep = np.zeros_like(mags, dtype=np.uint8)
    np.put_along_axis(keep, order[..., :k], 1, axis=-1)
    if orientation == "column":
        return keep.transpose(0, 2, 1).reshape(rows, cols)
    return keep.reshape(rows, cols)


def apply_mask(W, M) -> np.ndarray:
    """Elementwise product of weights and mask."""
    W = np.asarray(W)
    M = np.asarray(M)
    if W.shape != M.shape:
        raise ValidationError(f"weight shape {W.shape} != mask shape {M.shape}")
    return W * M


def mask_is_valid(M, params: CodeParams, orientation: str = "column") -> bool:
    """Check the at-most-k-ones-per-sub-vector invariant of a mask."""
    _check_orientation(orientation)
    M = np.asarray(M)
    rows, cols = M.shape
    if orientation == "column":
        if rows % params.n:
            return False
        counts = M.reshape(rows // params.n, params.n, cols).sum(axis=1)
    else:
        if cols % params.n:
            return False
        counts = M.reshape(rows, cols // params.n, params.n).sum(axis=2)
    return bool(np.all(counts <= params.k))


@dataclass(frozen=True)
class SparsitySchedule:
    """Gradual pruning plan: fixed n, strictly decreasing k per stage."""

    stages: tuple
    epochs_per_stage: tuple

    def __post_init__(self):
        if not self.stages:
            raise ValidationError("schedule needs at least one stage")
        stages = tuple(self.stages)
        n = stages[0].n
        for p in stages:
            if p.n != n:
                raise ValidationError("all schedule stages must share the same sub-vector length")
        ks = [p.k for p in stages]
        if any(b >= a for a, b in zip(ks, ks[1:])):
            raise ValidationError(f"stage k values must strictly decrease, got {ks}")
        epochs = tuple(self.epochs_per_stage)
        if len(epochs) != len(stages):
            raise ValidationError("need one epoch budget per stage")
        if any(e < 0 for e in epochs):
            raise ValidationError("epoch budgets must be non-negative")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "epochs_per_stage", epochs)

    @classmethod
    def single(cls, params: CodeParams, epochs: int) -> "SparsitySchedule":
        return cls(stages=(params,), epochs_per_stage=(epochs,))

    @classmethod
    def gradual(cls, n: int, k_values, epochs_per_stage) -> "SparsitySchedule":
        stages = tuple(CodeParams(n, k) for k in k_values)
        if isinstance(epochs_per_stage, int):
            epochs_per_stage = (epochs_per_stage,) * len(stages)
        return cls(stages=stages, epochs_per_stage=tuple(epochs_per_stage))

    @property
    def target(self) -> CodeParams:
        return self.stages[-1]


def next_stage(schedule: SparsitySchedule, current: int, W_float,
               orientation: str = "column"):
    """Mask and code parameters for the stage after ``current``.

    Pruning always re-evaluates the current float weights, so the new mask
    need not be a subset of the previous one.
    """
    if current + 1 >= len(schedule.stages):
        raise ValidationError(
            f"schedule exhausted: stage {current} is final ({len(schedule.stages)} stages)"
        )
    params = schedule.stages[current + 1]
    return structured_prune(W_float, params, orientation), params
