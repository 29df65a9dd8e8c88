"""Trainable fusion of semantic and forensic feature maps.

Each input goes through its own 1x1 projection + GroupNorm, the results are
concatenated and refined by 3x3 conv -> GroupNorm -> SiLU -> 1x1 conv. The
semantic map is bilinearly resized to the forensic grid first when the two
grids differ.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class FusionConfig:
    proj_channels: int = 64
    fuse_channels: int = 64
    groupnorm_groups: int = 8

    def __post_init__(self):
        if min(self.proj_channels, self.fuse_channels, self.groupnorm_groups) < 1:
            raise ConfigurationError("fusion channel counts must be positive")
        for c in (self.proj_channels, self.fuse_channels):
            if c % self.groupnorm_groups:
                raise ConfigurationError(
                    f"groupnorm groups {self.groupnorm_groups} must divide "
                    f"channel count {c}")


def _seeded_conv_init_(module: nn.Module, rng: torch.Generator):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=rng)
                if m.bias is not None:
                    m.bias.zero_()


class FeatureFusion(nn.Module):
    def __init__(self, semantic_channels: int, forensic_channels: int,
                 cfg: FusionConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        g = cfg.groupnorm_groups
        self.proj_s = nn.Conv2d(semantic_channels, cfg.proj_channels, 1)
        self.norm_s = nn.GroupNorm(g, cfg.proj_channels)
        self.proj_d = nn.Conv2d(forensic_channels, cfg.proj_channels, 1)
        self.norm_d = nn.GroupNorm(g, cfg.proj_channels)
        # replicate padding keeps constant fields constant through the 3x3
        self.refine = nn.Conv2d(2 * cfg.proj_channels, cfg.fuse_channels, 3,
                                padding=1, padding_mode="replicate")
        self.refine_norm = nn.GroupNorm(g, cfg.fuse_channels)
        self.out = nn.Conv2d(cfg.fuse_channels, cfg.fuse_channels, 1)
        _seeded_conv_init_(self, torch.Generator().manual_seed(seed))

    def forward(self, f_s: Tensor, f_d: Tensor) -> Tensor:
        squeeze = f_s.dim() == 3
        if squeeze:
            f_s, f_d = f_s.unsqueeze(0), f_d.unsqueeze(0)
        if f_s.shape[1] != self.proj_s.in_channels:
            raise DimensionError(
                f"semantic input has {f_s.shape[1]} channels, expected "
                f"{self.proj_s.in_channels}")
        if f_d.shape[1] != self.proj_d.in_channels:
            raise DimensionError(
                f"forensic input has {f_d.shape[1]} channels, expected "
                f"{self.proj_d.in_channels}")
        if f_s.shape[-2:] != f_d.shape[-2:]:
            f_s = F.interpolate(f_s, size=f_d.shape[-2:], mode="bilinear",
                                align_corners=False)
        s = self.norm_s(self.proj_s(f_s))
        d = self.norm_d(self.proj_d(f_d))
        x = torch.cat([s, d], dim=1)
        x = F.silu(self.refine_norm(self.refine(x)))
        x = self.out(x)
        return x.squeeze(0) if squeeze else x
