"""Deep-supervision objective: BCE + soft Dice on fused and side maps of both branches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .tensor import Tensor

BCE_EPS = 1e-7
DICE_EPS = 1e-6
N_SIDES = 6


def _target(pred: Tensor, target) -> np.ndarray:
    g = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if g.shape != pred.shape:
        if g.size == pred.data.size and g.ndim == pred.ndim - 1 and pred.ndim == 4 and pred.shape[1] == 1:
            return g.reshape(pred.shape)
        raise DimensionError(f"prediction shape {pred.shape} != target shape {g.shape}")
    return g


def _per_image_sum(x: Tensor) -> Tensor:
    """Sum over pixels of each image, averaged over the batch for 4-D input."""
    if x.ndim == 4:
        return T.mean(T.tsum(x, axis=(1, 2, 3)))
    return T.tsum(x)


def bce(pred: Tensor, target, mean: bool = False) -> Tensor:
    """Binary cross-entropy summed over pixels (``mean=True`` averages instead).

    ``pred`` holds probabilities; they are clamped to [1e-7, 1 - 1e-7].
    """
    pred = T.as_tensor(pred)
    g = _target(pred, target)
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    per_pixel = -(T.log(p) * g + T.log(1.0 - p) * (1.0 - g))
    if mean:
        return T.mean(per_pixel)
    return _per_image_sum(per_pixel)


def dice_loss(pred: Tensor, target) -> Tensor:
    """Global soft Dice loss ``1 - (2ΣPG + ε) / (ΣP² + ΣG² + ε)`` per image, batch-averaged."""
    pred = T.as_tensor(pred)
    g = _target(pred, target)
    axes = (1, 2, 3) if pred.ndim == 4 else None
    inter = T.tsum(pred * g, axis=axes)
    denom = T.tsum(pred * pred, axis=axes) + (g * g).sum(axis=axes)
    loss = 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
    return T.mean(loss) if pred.ndim == 4 else loss


def bce_dice(pred: Tensor, target, mean: bool = False) -> Tensor:
    return bce(pred, target, mean) + dice_loss(pred, target)


@dataclass
class LossWeights:
    mask: float = 1.0
    edge: float = 1.0
    # one weight per stage, shared by the mask and edge side terms
    side: tuple = (1.0,) * N_SIDES

    def __post_init__(self):
        self.side = tuple(float(v) for v in self.side)
        if len(self.side) != N_SIDES:
            raise UsageError(f"need {N_SIDES} side weights, got {len(self.side)}")
        if self.mask < 0 or self.edge < 0 or min(self.side) < 0:
            raise UsageError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    total: Tensor
    mask: float
    edge: float
    mask_sides: List[float] = field(default_factory=list)
    edge_sides: List[float] = field(default_factory=list)

    def terms(self) -> dict:
        out = {"mask": self.mask, "edge": self.edge}
        out.update({f"mask_side{i + 1}": v for i, v in enumerate(self.mask_sides)})
        out.update({f"edge_side{i + 1}": v for i, v in enumerate(self.edge_sides)})
        return out

    def recompose(self, w: LossWeights) -> float:
        side = sum(ws * (ze + ta) for ws, ze, ta in zip(w.side, self.mask_sides, self.edge_sides))
        return w.edge * self.edge + w.mask * self.mask + side


def total_loss(out, mask_gt, edge_gt, weights: LossWeights = None, bce_mean: bool = False) -> LossBreakdown:
    """Weighted sum of the 14 BCE+Dice terms of a :class:`NetworkOutput`."""
    w = weights if weights is not None else LossWeights()
    mask_sides: Sequence[Tensor] = out.mask_sides
    edge_sides: Sequence[Tensor] = out.edge_sides
    if len(mask_sides) != N_SIDES or len(edge_sides) != N_SIDES:
        raise UsageError(
            f"expected {N_SIDES} side maps per branch, got {len(mask_sides)} and {len(edge_sides)}"
        )
    zeta_mask = bce_dice(out.s_mask, mask_gt, bce_mean)
    tau_edge = bce_dice(out.s_edge, edge_gt, bce_mean)
    zeta_sides = [bce_dice(s, mask_gt, bce_mean) for s in mask_sides]
    tau_sides = [bce_dice(s, edge_gt, bce_mean) for s in edge_sides]

    total = tau_edge * w.edge + zeta_mask * w.mask
    for ws, ze, ta in zip(w.side, zeta_sides, tau_sides):
        total = total + (ta + ze) * ws
    return LossBreakdown(
        total=total,
        mask=zeta_mask.item(),
        edge=tau_edge.item(),
        mask_sides=[t.item() for t in zeta_sides],
        edge_sides=[t.item() for t in tau_sides],
    )
