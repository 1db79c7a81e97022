"""Tracking losses: focal center-map loss, GIoU and L1 box terms, total.

Boxes use normalized center-size coordinates (cx, cy, w, h) in [0, 1]
relative to the search region. The box losses run on tape tensors so the
regression gradient reaches the model; ``Box`` values are converted to
constants on entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .numerics import (
    Tensor,
    absolute,
    add,
    clamp,
    constant,
    log,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    pow_const,
    reciprocal,
    reshape,
    slice_cols,
    smul,
    sub,
    tsum,
)

PROB_EPS = 1e-6


@dataclass
class Box:
    """Axis-aligned box as normalized center/size; sizes must be nonnegative."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ContractError(f"box sizes must be nonnegative: w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass
class LossWeights:
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    alpha: float = 0.001

    def __post_init__(self):
        if self.lambda_iou < 0 or self.lambda_l1 < 0 or self.alpha < 0:
            raise ContractError("loss weights must be nonnegative")


@dataclass
class LossBundle:
    """Component losses plus their weighted total, all scalar tensors."""

    cls: Tensor
    iou: Tensor
    l1: Tensor
    eb: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "cls": self.cls.item(),
            "iou": self.iou.item(),
            "l1": self.l1.item(),
            "eb": self.eb.item(),
            "total": self.total.item(),
        }


def box_iou(a: Box, b: Box) -> float:
    """Plain-float IoU for metrics; zero-area pairs score 0."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def _as_box_tensor(value) -> Tensor:
    if isinstance(value, Box):
        return constant(value.as_array().reshape(1, 4))
    t = value if isinstance(value, Tensor) else constant(value)
    if t.size != 4:
        raise ShapeError(f"box tensor must hold 4 values, got shape {t.shape}")
    return t if t.shape == (1, 4) else reshape(t, (1, 4))


def _box_pieces(t: Tensor):
    cx, cy, w, h = (slice_cols(t, i, i + 1) for i in range(4))
    hw, hh = smul(w, 0.5), smul(h, 0.5)
    return sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh), mul(w, h)


def giou_loss(pred, gt) -> Tensor:
    """1 - GIoU as a scalar tensor in [0, 2].

    Zero-area cases stay total: IoU counts as 0 when the union is empty,
    and the enclosure penalty as 0 when the enclosing box is empty.
    """
    a = _as_box_tensor(pred)
    b = _as_box_tensor(gt)
    ax1, ay1, ax2, ay2, area_a = _box_pieces(a)
    bx1, by1, bx2, by2, area_b = _box_pieces(b)
    zero = constant(np.zeros((1, 1)))
    iw = maximum(zero, sub(minimum(ax2, bx2), maximum(ax1, bx1)))
    ih = maximum(zero, sub(minimum(ay2, by2), maximum(ay1, by1)))
    inter = mul(iw, ih)
    union = sub(add(area_a, area_b), inter)
    cw = sub(maximum(ax2, bx2), minimum(ax1, bx1))
    ch = sub(maximum(ay2, by2), minimum(ay1, by1))
    c_area = mul(cw, ch)
    iou = mul(inter, reciprocal(union)) if union.data.item() > 0 else zero
    penalty = (
        mul(sub(c_area, union), reciprocal(c_area)) if c_area.data.item() > 0 else zero
    )
    giou = sub(iou, penalty)
    one = constant(np.ones((1, 1)))
    return reshape(sub(one, giou), ())


def l1_box_loss(pred, gt) -> Tensor:
    """Mean absolute difference over the four box coordinates."""
    return reshape(mean(absolute(sub(_as_box_tensor(pred), _as_box_tensor(gt)))), ())


def weighted_focal(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Center-map focal loss normalized by the number of positive cells.

    Cells with gt exactly 1 are positives; elsewhere the penalty is damped
    by (1 - gt)^4. Predictions are clamped to [1e-6, 1 - 1e-6] before logs.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"focal: pred {pred.shape} vs gt {gt.shape}")
    if gt.min() < 0 or gt.max() > 1:
        raise ContractError("focal: gt map must lie in [0, 1]")
    pos_mask = (gt == 1.0).astype(np.float64)
    n_pos = pos_mask.sum()
    if n_pos == 0:
        raise ContractError("focal: gt map has no positive location")
    p = clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    one = constant(np.ones_like(gt))
    pos_term = mul(mul(log(p), pow_const(sub(one, p), 2.0)), constant(pos_mask))
    neg_weight = ((1.0 - gt) ** 4) * (1.0 - pos_mask)
    neg_term = mul(mul(log(sub(one, p)), pow_const(p, 2.0)), constant(neg_weight))
    return smul(neg(add(tsum(pos_term), tsum(neg_term))), 1.0 / n_pos)


def _check_finite(name: str, value: Tensor) -> None:
    if not np.all(np.isfinite(value.data)):
        raise NumericError(f"loss component '{name}' is not finite")


def total_loss(cls: Tensor, iou: Tensor, l1: Tensor, eb: Tensor,
               weights: LossWeights) -> LossBundle:
    """Weighted sum: cls + lambda_iou * iou + lambda_l1 * l1 + alpha * eb."""
    for name, value in (("cls", cls), ("iou", iou), ("l1", l1), ("eb", eb)):
        _check_finite(name, value)
    total = add(
        add(add(cls, smul(iou, weights.lambda_iou)), smul(l1, weights.lambda_l1)),
        smul(eb, weights.alpha),
    )
    return LossBundle(cls=cls, iou=iou, l1=l1, eb=eb, total=total)
