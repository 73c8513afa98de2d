"""Training objective at desk scale: masked language-modeling loss, Dice loss,
and pixel-wise cross-entropy, with analytic gradients.

The combined objective is lm + lambda_seg * (dice + ce) with lambda_seg
defaulting to 0.5. Probabilities are clamped to [1e-7, 1 - 1e-7] and the Dice
ratio uses smoothing 1.0 so every value here is exactly testable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import BinaryMask

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0
DEFAULT_LAMBDA_SEG = 0.5


@dataclass(frozen=True)
class ProbMask:
    """Per-pixel foreground probabilities, clamped away from 0 and 1."""

    probs: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        p = np.clip(np.asarray(self.probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
        if p.ndim != 2:
            raise ValueError("probs must be a 2D grid")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    lm: float
    dice: float
    ce: float
    lambda_seg: float
    total: float


def _check_dims(pred: ProbMask, gt: BinaryMask) -> None:
    if pred.probs.shape != gt.pixels.shape:
        raise ValueError(
            f"prediction {pred.probs.shape} and target {gt.pixels.shape} differ in shape")


def dice_loss(pred: ProbMask, gt: BinaryMask) -> tuple[float, np.ndarray]:
    """Soft Dice loss with smoothing, plus the analytic gradient wrt probs.

    loss = 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s)
    """
    _check_dims(pred, gt)
    p = pred.probs
    g = gt.pixels.astype(np.float64)
    num = 2.0 * float((p * g).sum()) + DICE_SMOOTH
    den = float(p.sum()) + float(g.sum()) + DICE_SMOOTH
    loss = 1.0 - num / den
    grad = -(2.0 * g * den - num) / den ** 2
    return loss, grad


def pixel_ce(pred: ProbMask, gt: BinaryMask) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over pixels, with analytic gradient."""
    _check_dims(pred, gt)
    p = pred.probs
    g = gt.pixels.astype(np.float64)
    n = p.size
    loss = float(-(g * np.log(p) + (1.0 - g) * np.log1p(-p)).sum() / n)
    grad = (-g / p + (1.0 - g) / (1.0 - p)) / n
    return loss, grad


def lm_loss(logits: np.ndarray, targets: Sequence[int],
            exclude: Sequence[int] = ()) -> float:
    """Mean token cross-entropy over positions not in `exclude` (the injected
    visual-feature positions carry no language-modeling target)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ValueError("logits must be (T, V) with one target per position")
    excluded = set(int(i) for i in exclude)
    if not excluded.issubset(range(logits.shape[0])):
        raise ValueError("excluded positions must be valid sequence positions")
    keep = [i for i in range(logits.shape[0]) if i not in excluded]
    if not keep:
        raise ValueError("all positions excluded; loss undefined")
    kept = logits[keep]
    shifted = kept - kept.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(keep)), targets[keep]]
    return float((logz - picked).mean())


def total_loss(lm: float, dice: float, ce: float,
               lambda_seg: float = DEFAULT_LAMBDA_SEG) -> LossBreakdown:
    """total = lm + lambda_seg * (dice + ce)."""
    if lm < 0 or dice < 0 or ce < 0:
        raise ValueError("loss components must be nonnegative")
    return LossBreakdown(lm=lm, dice=dice, ce=ce, lambda_seg=lambda_seg,
                         total=lm + lambda_seg * (dice + ce))
