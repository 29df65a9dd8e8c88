"""Latent perturbation mechanisms and the shift-warped timestep grid.

Three mechanisms feed the forensic branch: rectified-flow interpolation
(the default), a variance-preserving DDPM baseline, and a zero-noise
pass-through used for ablations.
"""

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .errors import ConfigurationError, DimensionError, DomainError

MECHANISMS = ("rf", "ddpm", "zero")

# linear beta schedule for the DDPM baseline
DDPM_STEPS = 1000
DDPM_BETA_START = 1e-4
DDPM_BETA_END = 0.02

_betas = torch.linspace(DDPM_BETA_START, DDPM_BETA_END, DDPM_STEPS, dtype=torch.float64)
_alphas_cumprod = torch.cumprod(1.0 - _betas, dim=0)


@dataclass(frozen=True)
class NoiseConfig:
    """Perturbation mechanism plus the base timestep grid."""

    mechanism: str = "rf"
    shift_s: float = 3.0
    levels: tuple = (0.25, 0.5, 0.75)
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ConfigurationError(
                f"unknown mechanism {self.mechanism!r}, expected one of {MECHANISMS}")
        if self.shift_s <= 0:
            raise ConfigurationError(f"shift_s must be > 0, got {self.shift_s}")
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ConfigurationError("levels must be non-empty")
        if any(not (0.0 < t < 1.0) for t in levels):
            raise ConfigurationError(f"levels must lie in (0, 1), got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigurationError(f"levels must be strictly increasing, got {levels}")


@dataclass
class NoisedLatentSet:
    """Ordered (t_effective, z_t) entries plus the clean source latent."""

    entries: list  # list[(float, Tensor)], one per configured level
    source: Tensor


def _check_pair(z0: Tensor, eps: Tensor):
    if z0.shape != eps.shape:
        raise DimensionError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")


def rf_interpolate(z0: Tensor, t: float, eps: Tensor) -> Tensor:
    """Rectified-flow forward perturbation: (1 - t) * z0 + t * eps."""
    _check_pair(z0, eps)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return (1.0 - t) * z0 + t * eps


def shift_warp(t: float, s: float) -> float:
    """Warp a base timestep through t' = s*t / (1 + (s-1)*t).

    Monotone bijection of [0, 1] for every s > 0; identity at s = 1.
    Larger s pushes the grid toward higher noise.
    """
    if s <= 0:
        raise DomainError(f"shift parameter must be > 0, got {s}")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if t == 0.0 or t == 1.0:
        return t  # endpoints are fixed exactly, immune to roundoff
    return s * t / (1.0 + (s - 1.0) * t)


def ddpm_perturb(z0: Tensor, t: float, eps: Tensor) -> Tensor:
    """Variance-preserving perturbation sqrt(abar_t)*z0 + sqrt(1-abar_t)*eps.

    Continuous t in [0, 1] indexes a linear beta schedule with 1000 discrete
    steps via floor(t * 999).
    """
    _check_pair(z0, eps)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    step = min(int(math.floor(t * (DDPM_STEPS - 1))), DDPM_STEPS - 1)
    abar = _alphas_cumprod[step].item()
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


def make_noised_set(z0: Tensor, cfg: NoiseConfig, rng: torch.Generator) -> NoisedLatentSet:
    """Build the per-level noised latents consumed by the forensic branch.

    rf:   t_eff = shift_warp(t_k, s), fresh standard-normal eps per level
    ddpm: t_eff = t_k (no warp), fresh eps per level
    zero: entries are copies of z0, t_eff = t_k
    """
    entries = []
    for t_k in cfg.levels:
        if cfg.mechanism == "zero":
            entries.append((t_k, z0.clone()))
            continue
        eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
        if cfg.mechanism == "rf":
            t_eff = shift_warp(t_k, cfg.shift_s)
            entries.append((t_eff, rf_interpolate(z0, t_eff, eps)))
        else:
            entries.append((t_k, ddpm_perturb(z0, t_k, eps)))
    return NoisedLatentSet(entries=entries, source=z0)
