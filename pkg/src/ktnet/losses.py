"""
Training losses: pixel-wise cross-entropy, smooth-L1 and the triplet loss.

Masked losses average over the unmasked positions only, so a handful of
annotated points gives gradients of the same scale as a dense map.
"""

from typing import Optional, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, _result

IGNORE = -1

MaskLike = Union[np.ndarray, Tensor, None]


def _mask_array(mask: MaskLike, shape: Tuple[int, ...]) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    array = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if array.shape != shape:
        raise ShapeError(f"mask shape {array.shape} does not match {shape}")
    return array.astype(bool)


def _zero_loss(pred: Tensor, op: str) -> Tensor:
    return _result(np.array(0.0), (pred,), lambda g: (np.zeros(pred.shape),), op)


def pixel_ce(
    pred: Tensor,
    target: np.ndarray,
    mask: MaskLike = None,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Cross-entropy over the class axis 0 of ``pred``.

    Args:
        pred: Logits of shape (C, *S)
        target: Integer class indices of shape S; ``IGNORE`` marks unlabeled cells
        mask: Optional boolean array of shape S; False cells are left out
        weights: Optional per-class weights of shape (C,)

    Returns:
        Scalar loss. Zero, with a zero gradient, when nothing is labeled.
    """
    n_classes = pred.shape[0]
    target = np.asarray(target)
    spatial = pred.shape[1:]
    if target.shape != spatial:
        raise ShapeError(f"pixel_ce: target shape {target.shape} vs logits {pred.shape}")
    valid = _mask_array(mask, spatial) & (target != IGNORE)
    labels = target[valid].astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeError(
            f"pixel_ce: class index out of range [0, {n_classes}): "
            f"found {int(labels.min())}..{int(labels.max())}"
        )
    if labels.size == 0:
        return _zero_loss(pred, "pixel_ce")

    logits = pred.data[:, valid]  # (C, n)
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - log_z
    cols = np.arange(labels.size)
    picked = logp[labels, cols]
    if weights is None:
        denom = float(labels.size)
        value = -picked.sum() / denom
        scale_per_point = np.full(labels.size, 1.0 / denom)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n_classes,):
            raise ShapeError(f"pixel_ce: weights shape {w.shape}, expected ({n_classes},)")
        wt = w[labels]
        denom = float(wt.sum())
        if denom <= 0:
            return _zero_loss(pred, "pixel_ce")
        value = -(wt * picked).sum() / denom
        scale_per_point = wt / denom

    def rule(g: np.ndarray):
        d = np.exp(logp)
        d[labels, cols] -= 1.0
        d *= scale_per_point * g
        out = np.zeros(pred.shape)
        out[:, valid] = d
        return (out,)

    return _result(np.array(value), (pred,), rule, "pixel_ce")


def smooth_l1(
    pred: Tensor, target: np.ndarray, mask: MaskLike = None, beta: float = 1.0
) -> Tensor:
    """Smooth-L1 averaged over the unmasked elements of ``pred``."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if target.shape != pred.shape:
        raise ShapeError(f"smooth_l1: target shape {target.shape} vs {pred.shape}")
    valid = _mask_array(mask, pred.shape)
    count = int(valid.sum())
    if count == 0:
        return _zero_loss(pred, "smooth_l1")
    diff = np.where(valid, pred.data - target, 0.0)
    small = np.abs(diff) < beta
    per = np.where(small, 0.5 * diff * diff / beta, np.abs(diff) - 0.5 * beta)
    value = per.sum() / count

    def rule(g: np.ndarray):
        d = np.where(small, diff / beta, np.sign(diff)) * valid
        return (d * (g / count),)

    return _result(np.array(value), (pred,), rule, "smooth_l1")


def _distance(a: Tensor, b: Tensor) -> Tensor:
    d = T.sub(a, b)
    return T.sqrt(T.shift(T.reduce_sum(T.mul(d, d), axis=1), 1e-12))


def triplet_loss(
    anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = 0.5
) -> Tensor:
    """Mean of max(0, d(a, p) - d(a, n) + margin) over the rows."""
    if not (anchor.shape == positive.shape == negative.shape) or anchor.ndim != 2:
        raise ShapeError(
            f"triplet_loss: shapes {anchor.shape}, {positive.shape}, {negative.shape}"
        )
    if anchor.shape[0] == 0:
        return _zero_loss(anchor, "triplet_loss")
    gap = T.sub(_distance(anchor, positive), _distance(anchor, negative))
    return T.reduce_mean(T.relu(T.shift(gap, margin)))


def loss(
    kind: str,
    pred: Tensor,
    target,
    mask: MaskLike = None,
    margin: float = 0.5,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Dispatch to a named loss.

    For ``triplet`` the ``target`` is the pair (positive, negative) of row
    features matching ``pred``.
    """
    if kind == "pixel_ce":
        return pixel_ce(pred, target, mask, weights)
    if kind == "smooth_l1":
        return smooth_l1(pred, target, mask)
    if kind == "triplet":
        positive, negative = target
        return triplet_loss(pred, positive, negative, margin)
    raise ValueError(f"unknown loss kind: {kind}")
