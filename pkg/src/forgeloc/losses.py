"""Weighted BCE + Dice training objective."""

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigurationError, DimensionError

# probability clamp keeping log() finite for hard 0/1 predictions
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_bce: float = 0.5
    lambda_dice: float = 0.5
    epsilon_smooth: float = 1e-6

    def __post_init__(self):
        if self.lambda_bce < 0 or self.lambda_dice < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.lambda_bce + self.lambda_dice <= 0:
            raise ConfigurationError("at least one loss weight must be positive")
        if self.epsilon_smooth <= 0:
            raise ConfigurationError("epsilon_smooth must be positive")


def _check_shapes(pred: Tensor, gt: Tensor):
    if pred.shape != gt.shape:
        raise DimensionError(
            f"pred shape {tuple(pred.shape)} != gt shape {tuple(gt.shape)}")


def bce_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean per-pixel binary cross-entropy, probabilities clamped to
    [1e-7, 1-1e-7]."""
    _check_shapes(pred, gt)
    p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()


def dice_loss(pred: Tensor, gt: Tensor, eps: float = 1e-6) -> Tensor:
    """One minus the smoothed Dice overlap coefficient.

    The smoothing term makes the all-empty case well-defined (loss 0).
    """
    _check_shapes(pred, gt)
    inter = (pred * gt).sum()
    denom = pred.sum() + gt.sum()
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def total_loss(pred: Tensor, gt: Tensor, w: LossWeights) -> Tensor:
    """lambda_bce * BCE + lambda_dice * Dice."""
    return w.lambda_bce * bce_loss(pred, gt) + w.lambda_dice * dice_loss(
        pred, gt, w.epsilon_smooth)
