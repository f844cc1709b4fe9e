"""Pixelwise cross-entropy over class logits, plus the class-reweighted
variant that removes background pixels from both the value and the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import DataError, DimensionError, ParameterError
from .tensor import Tensor


@dataclass
class ClassWeights:
    """Per-class non-negative loss weights, indexed by class."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ParameterError("class weights must be a vector")
        if (self.values < 0).any():
            raise ParameterError("class weights must be non-negative")
        if not (self.values > 0).any():
            raise ParameterError("at least one class weight must be positive")

    @classmethod
    def background_zero(cls, class_count: int) -> "ClassWeights":
        """Background (class 0) weighted 0, every other class weighted 1."""
        values = np.ones(class_count)
        values[0] = 0.0
        return cls(values)

    @classmethod
    def uniform(cls, class_count: int, value: float = 1.0) -> "ClassWeights":
        return cls(np.full(class_count, value))


def _as_target_array(target, logits_shape) -> np.ndarray:
    """Accept an (N,H,W) int array, a LabelMap, or a sequence of LabelMaps."""
    if hasattr(target, "classes"):
        arr = np.asarray(target.classes)[None]
    elif isinstance(target, (list, tuple)) and target and hasattr(target[0], "classes"):
        arr = np.stack([np.asarray(t.classes) for t in target])
    else:
        arr = np.asarray(target)
    if arr.ndim != 3:
        raise DimensionError(f"target must be (N,H,W) class indices, got shape {arr.shape}")
    n, c, h, w = logits_shape
    if arr.shape != (n, h, w):
        raise DimensionError(f"target shape {arr.shape} does not match logits {logits_shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) >= c:
        raise DataError(f"target labels must lie in [0, {c})")
    return arr.astype(np.int64)


def _per_pixel_ce(logits: Tensor, target: np.ndarray):
    """Stabilized per-pixel losses and the softmax needed for the gradient."""
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sez)
    softmax = ez / sez
    picked = np.take_along_axis(log_probs, target[:, None], axis=1)[:, 0]
    return -picked, softmax


def cross_entropy(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """Mean (or sum) over pixels of -x[class] + log sum_j exp(x[j])."""
    if logits.ndim != 4:
        raise DimensionError(f"logits must be (N,C,H,W), got shape {logits.shape}")
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"unknown reduction {reduction!r}")
    tgt = _as_target_array(target, logits.shape)
    losses, softmax = _per_pixel_ce(logits, tgt)
    n_pix = losses.size
    value = losses.sum() if reduction == "sum" else losses.mean()

    def backward(g):
        grad = softmax.copy()
        np.put_along_axis(
            grad,
            tgt[:, None],
            np.take_along_axis(grad, tgt[:, None], axis=1) - 1.0,
            axis=1,
        )
        scale = float(g) if reduction == "sum" else float(g) / n_pix
        return (grad * scale,)

    return ops._track((logits,), np.asarray(value, dtype=logits.dtype), backward)


def reweighted_cross_entropy(
    logits: Tensor,
    target,
    weights: ClassWeights,
    reduction: str = "mean_nonzero",
) -> Tensor:
    """Cross-entropy with each pixel scaled by the weight of its true class.

    ``mean_nonzero`` divides by the number of pixels whose class weight is
    positive, so vast zero-weight (background) regions neither dilute the
    loss nor receive gradient.  ``sum`` skips the division.  A batch with no
    positively weighted pixels yields an exact zero with zero gradient.
    """
    if logits.ndim != 4:
        raise DimensionError(f"logits must be (N,C,H,W), got shape {logits.shape}")
    if reduction not in ("mean_nonzero", "sum"):
        raise ParameterError(f"unknown reduction {reduction!r}")
    if len(weights.values) != logits.shape[1]:
        raise DimensionError(
            f"{len(weights.values)} class weights for {logits.shape[1]} logit channels"
        )
    tgt = _as_target_array(target, logits.shape)
    losses, softmax = _per_pixel_ce(logits, tgt)
    w_pix = weights.values.astype(logits.dtype)[tgt]  # (N,H,W)
    denom = int(np.count_nonzero(w_pix)) if reduction == "mean_nonzero" else 1
    total = float((losses * w_pix).sum())
    value = total / denom if denom else 0.0

    def backward(g):
        if denom == 0:
            return (np.zeros_like(logits.data),)
        grad = softmax.copy()
        np.put_along_axis(
            grad,
            tgt[:, None],
            np.take_along_axis(grad, tgt[:, None], axis=1) - 1.0,
            axis=1,
        )
        grad *= w_pix[:, None]
        return (grad * (float(g) / denom),)

    return ops._track((logits,), np.asarray(value, dtype=logits.dtype), backward)
