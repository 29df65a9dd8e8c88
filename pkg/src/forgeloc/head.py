"""Localization head: fused features to a full-resolution probability mask."""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class HeadConfig:
    mid_channels: int = 32
    upsample_scale: int = 8  # fixed at construction from input/output geometry

    def __post_init__(self):
        if self.mid_channels < 1:
            raise ConfigurationError("mid_channels must be positive")
        if self.upsample_scale < 1:
            raise ConfigurationError("upsample_scale must be a positive integer")


class LocalizationHead(nn.Module):
    """3x3 conv -> ReLU -> 1x1 conv to one channel -> fixed-scale bilinear
    upsample -> sigmoid. Bilinear uses half-pixel (align_corners=False)
    semantics."""

    def __init__(self, in_channels: int, cfg: HeadConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.conv1 = nn.Conv2d(in_channels, cfg.mid_channels, 3, padding=1,
                               padding_mode="replicate")
        self.conv2 = nn.Conv2d(cfg.mid_channels, 1, 1)
        rng = torch.Generator().manual_seed(seed)
        for m in (self.conv1, self.conv2):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=rng)
                m.bias.zero_()

    def logits(self, f_fuse: Tensor) -> Tensor:
        """Low-resolution pre-sigmoid logits (1 channel)."""
        if f_fuse.shape[-3] != self.conv1.in_channels:
            raise DimensionError(
                f"fused input has {f_fuse.shape[-3]} channels, expected "
                f"{self.conv1.in_channels}")
        return self.conv2(F.relu(self.conv1(f_fuse)))

    def forward(self, f_fuse: Tensor) -> Tensor:
        squeeze = f_fuse.dim() == 3
        if squeeze:
            f_fuse = f_fuse.unsqueeze(0)
        z = self.logits(f_fuse)
        z = F.interpolate(z, scale_factor=self.cfg.upsample_scale,
                          mode="bilinear", align_corners=False)
        mask = torch.sigmoid(z)
        return mask.squeeze(0) if squeeze else mask
