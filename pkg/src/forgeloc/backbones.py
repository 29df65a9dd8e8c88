"""Stand-in networks for the frozen latent encoder, the denoiser branch,
and the semantic encoder.

All three keep the interface contracts of their full-scale counterparts
(shapes, freezing, named Q/K/V projections) at toy scale. Weights are
drawn from per-instance generators so identical seeds give bit-identical
networks.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from .errors import ConfigurationError, DimensionError
from .noise import NoisedLatentSet


@dataclass(frozen=True)
class LatentEncoderConfig:
    in_channels: int = 3
    latent_channels: int = 4
    downsample_factor: int = 8
    weights_seed: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.latent_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        f = self.downsample_factor
        if f < 2 or f & (f - 1) != 0:
            raise ConfigurationError(
                f"downsample_factor must be a power of two >= 2, got {f}")


@dataclass(frozen=True)
class DenoiserConfig:
    width: int = 96
    depth: int = 3
    time_embed_dim: int = 64
    out_channels: int = 64
    tap_layer: int = -1  # -1 selects the penultimate attention block

    def __post_init__(self):
        if min(self.width, self.depth, self.out_channels) < 1:
            raise ConfigurationError("width, depth, out_channels must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigurationError("time_embed_dim must be an even integer >= 2")
        tap = self.tap_index
        if not 0 <= tap < self.depth:
            raise ConfigurationError(
                f"tap_layer {self.tap_layer} outside [0, {self.depth})")

    @property
    def tap_index(self) -> int:
        if self.tap_layer == -1:
            return max(self.depth - 2, 0)
        return self.tap_layer


@dataclass(frozen=True)
class SemanticEncoderConfig:
    patch_size: int = 8
    embed_dim: int = 96
    depth: int = 3
    out_channels: int = 64

    def __post_init__(self):
        if min(self.patch_size, self.embed_dim, self.depth, self.out_channels) < 1:
            raise ConfigurationError("semantic encoder dims must be positive")


def sinusoidal_time_embedding(t: float, dim: int) -> Tensor:
    """Classic sin/cos embedding of a scalar timestep; t in [0,1] is scaled
    by 1000 so nearby levels map to distinct phases."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32)
                      / max(half - 1, 1))
    args = 1000.0 * t * freqs
    return torch.cat([torch.sin(args), torch.cos(args)])


class SelfAttention(nn.Module):
    """Single-head attention with separately named Q/K/V projections
    (the LoRA attachment contract)."""

    def __init__(self, dim):
        super().__init__()
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.scale = dim ** -0.5

    def forward(self, x):
        q, k, v = self.q_proj(x), self.k_proj(x), self.v_proj(x)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        return self.out_proj(attn @ v)


class TransformerBlock(nn.Module):
    def __init__(self, dim, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


# init scale for the stand-in transformers; large enough that the frozen
# attention actually mixes tokens (pure 0.02 leaves the blocks near-identity
# at these tiny widths, starving the adapters of leverage)
TRANSFORMER_INIT_STD = 0.02


def init_transformer_params_(module: nn.Module, rng: torch.Generator, std=None):
    """ViT-style init: N(0, std) matrices, zero biases, unit norm scales."""
    if std is None:
        std = TRANSFORMER_INIT_STD
    for name, p in module.named_parameters():
        with torch.no_grad():
            if p.dim() >= 2:
                p.normal_(0.0, std, generator=rng)
            elif name.endswith(".weight") or name == "weight":
                p.fill_(1.0)  # LayerNorm scale
            else:
                p.zero_()


class LatentEncoder(nn.Module):
    """Frozen strided-conv map from image space to the latent grid.

    log2(downsample_factor) stride-2 convolutions with ReLU between and a
    tanh bound at the end; weights fixed by the config seed, never trained.
    """

    def __init__(self, cfg: LatentEncoderConfig):
        super().__init__()
        self.cfg = cfg
        n_layers = int(math.log2(cfg.downsample_factor))
        widths = [cfg.in_channels] + [16 * 2 ** i for i in range(n_layers - 1)]
        widths += [cfg.latent_channels]
        layers = []
        for i in range(n_layers):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1))
            if i < n_layers - 1:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)
        rng = torch.Generator().manual_seed(cfg.weights_seed)
        for m in self.net:
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=rng)
                    m.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image: Tensor) -> Tensor:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        h, w = image.shape[-2:]
        f = self.cfg.downsample_factor
        if h % f or w % f:
            raise DimensionError(
                f"spatial dims {h}x{w} not divisible by downsample factor {f}")
        z = self.net(2.0 * image - 1.0).tanh()
        return z.squeeze(0) if squeeze else z


def encode_latent(image: Tensor, cfg: LatentEncoderConfig) -> Tensor:
    """Functional form; the encoder is frozen and fully determined by cfg."""
    with torch.no_grad():
        return LatentEncoder(cfg)(image)


class Denoiser(nn.Module):
    """Conv stem + attention blocks over the latent grid, conditioned on the
    noise level through an additive sinusoidal time embedding.

    Per noised entry the network runs through the tap block; the per-level
    tap features are channel-concatenated and consolidated by a trainable
    1x1 projection to ``out_channels``.
    """

    def __init__(self, cfg: DenoiserConfig, in_channels: int, grid_size,
                 n_levels: int, seed: int = 0):
        super().__init__()
        if n_levels < 1:
            raise ConfigurationError("denoiser needs at least one noise level")
        self.cfg = cfg
        self.grid = (grid_size, grid_size) if isinstance(grid_size, int) else tuple(grid_size)
        self.n_levels = n_levels
        self.stem = nn.Conv2d(in_channels, cfg.width, 3, padding=1)
        self.pos_embed = nn.Parameter(
            torch.zeros(1, self.grid[0] * self.grid[1], cfg.width))
        self.time_mlp = nn.Linear(cfg.time_embed_dim, cfg.width)
        self.blocks = nn.ModuleList(
            [TransformerBlock(cfg.width) for _ in range(cfg.depth)])
        self.consolidate = nn.Conv2d(n_levels * cfg.width, cfg.out_channels, 1)
        rng = torch.Generator().manual_seed(seed)
        init_transformer_params_(self, rng)
        with torch.no_grad():
            fan_in = self.consolidate.in_channels
            self.consolidate.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=rng)
            self.consolidate.bias.zero_()

    def _level_features(self, z_t: Tensor, t_eff: float) -> Tensor:
        b, _, h, w = z_t.shape
        if (h, w) != self.grid:
            raise DimensionError(f"latent grid {h}x{w} != configured {self.grid}")
        x = self.stem(z_t).flatten(2).transpose(1, 2)  # (B, T, width)
        x = x + self.pos_embed
        temb = sinusoidal_time_embedding(t_eff, self.cfg.time_embed_dim)
        x = x + self.time_mlp(temb).reshape(1, 1, -1)
        for block in self.blocks[: self.cfg.tap_index + 1]:
            x = block(x)
        return x.transpose(1, 2).reshape(b, self.cfg.width, h, w)

    def forward(self, noised: NoisedLatentSet) -> Tensor:
        if not noised.entries:
            raise ConfigurationError("noised latent set is empty")
        if len(noised.entries) != self.n_levels:
            raise DimensionError(
                f"{len(noised.entries)} entries but consolidation expects "
                f"{self.n_levels}")
        squeeze = noised.source.dim() == 3
        feats = []
        for t_eff, z_t in noised.entries:
            if z_t.shape != noised.source.shape:
                raise DimensionError("noised entry shape differs from source")
            feats.append(self._level_features(
                z_t.unsqueeze(0) if squeeze else z_t, t_eff))
        out = self.consolidate(torch.cat(feats, dim=1))
        return out.squeeze(0) if squeeze else out


class SemanticEncoder(nn.Module):
    """Patch-embedding ViT stand-in producing a spatial semantic feature map."""

    def __init__(self, cfg: SemanticEncoderConfig, image_size: int,
                 in_channels: int = 3, seed: int = 0):
        super().__init__()
        if image_size % cfg.patch_size:
            raise ConfigurationError(
                f"image size {image_size} not divisible by patch {cfg.patch_size}")
        self.cfg = cfg
        self.grid = image_size // cfg.patch_size
        self.patch_embed = nn.Conv2d(in_channels, cfg.embed_dim,
                                     cfg.patch_size, stride=cfg.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid ** 2, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            [TransformerBlock(cfg.embed_dim) for _ in range(cfg.depth)])
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.out_proj = nn.Linear(cfg.embed_dim, cfg.out_channels)
        init_transformer_params_(self, torch.Generator().manual_seed(seed))

    def forward(self, image: Tensor) -> Tensor:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        h, w = image.shape[-2:]
        if h % self.cfg.patch_size or w % self.cfg.patch_size:
            raise DimensionError(
                f"spatial dims {h}x{w} not divisible by patch {self.cfg.patch_size}")
        x = self.patch_embed(2.0 * image - 1.0)  # (B, D, H_S, W_S)
        hs, ws = x.shape[-2:]
        x = x.flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.out_proj(self.norm(x))
        out = x.transpose(1, 2).reshape(-1, self.cfg.out_channels, hs, ws)
        return out.squeeze(0) if squeeze else out
