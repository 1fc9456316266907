"""Class-weighted Dice loss over one-hot targets.

For probabilities ``p`` and one-hot targets ``g`` (classes on the last axis,
every other axis flattened into one voxel index ``i``)::

    w_c  = 1 / (sum_i g_ci + eps_w)
    loss = 1 - (2 sum_c w_c sum_i g_ci p_ci + eps)
               / (sum_c w_c (sum_i g_ci^2 + sum_i p_ci^2) + eps)

so rare classes get large weights. Background is an ordinary class here.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import IndexOutOfRange, ShapeError

SMOOTH = 1e-5
WEIGHT_EPS = 1e-6


def one_hot(mask, n_classes: int = 4):
    """Append a one-hot class axis; accepts numpy arrays or tensors."""
    if isinstance(mask, torch.Tensor):
        if mask.numel() and (mask.min() < 0 or mask.max() >= n_classes):
            raise IndexOutOfRange(f"class index outside [0, {n_classes})")
        return torch.nn.functional.one_hot(mask.long(), n_classes).to(torch.float32)
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= n_classes):
        bad = mask[(mask < 0) | (mask >= n_classes)][0]
        raise IndexOutOfRange(f"class index {bad} outside [0, {n_classes})")
    return np.eye(n_classes, dtype=np.float32)[mask.astype(np.int64)]


def class_weights(target: torch.Tensor, weight_eps: float = WEIGHT_EPS) -> torch.Tensor:
    reduce_dims = tuple(range(target.ndim - 1))
    return 1.0 / (target.sum(dim=reduce_dims) + weight_eps)


def weighted_dice_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    smooth: float = SMOOTH,
    weight_eps: float = WEIGHT_EPS,
) -> torch.Tensor:
    """Scalar loss for channels-last ``probs`` and one-hot ``target`` of equal shape.

    All leading axes (batch included) are pooled into a single voxel sum.
    """
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target, dtype=probs.dtype, device=probs.device)
    if probs.shape != target.shape:
        raise ShapeError(f"probs {tuple(probs.shape)} and target {tuple(target.shape)} differ")
    reduce_dims = tuple(range(probs.ndim - 1))
    w = class_weights(target, weight_eps).detach()
    intersect = (target * probs).sum(dim=reduce_dims)
    denom = (target * target).sum(dim=reduce_dims) + (probs * probs).sum(dim=reduce_dims)
    num = 2.0 * (w * intersect).sum() + smooth
    den = (w * denom).sum() + smooth
    return 1.0 - num / den
