"""Low-rank adapter algebra and the attention-QKV attachment policy.

An adapter adds the delta (alpha / r) * B @ A to a frozen base linear map.
B starts at zero so the adapted network is exactly the base network until
the first optimizer step; only A and B ever receive gradients.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigurationError, DimensionError

QKV_NAMES = ("q_proj", "k_proj", "v_proj")
A_INIT_STD = 0.02


class LoRALinear(nn.Module):
    """A frozen base linear map with a trainable low-rank delta."""

    def __init__(self, base: nn.Linear, rank_r: int, alpha: float,
                 target_name: str = "", rng: torch.Generator = None):
        super().__init__()
        d_out, d_in = base.weight.shape
        if rank_r < 1 or rank_r > min(d_in, d_out):
            raise ConfigurationError(
                f"rank {rank_r} outside [1, min({d_in}, {d_out})] for {target_name!r}")
        if alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {alpha}")
        self.base = base
        self.base.weight.requires_grad_(False)
        if self.base.bias is not None:
            self.base.bias.requires_grad_(False)
        self.rank_r = rank_r
        self.alpha = alpha
        self.target_name = target_name
        a = torch.empty(rank_r, d_in)
        a.normal_(0.0, A_INIT_STD, generator=rng)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(d_out, rank_r))

    @property
    def d_in(self):
        return self.base.weight.shape[1]

    @property
    def d_out(self):
        return self.base.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return lora_forward(x, self.base.weight, self.base.bias, self)

    def extra_repr(self):
        return f"target={self.target_name!r}, r={self.rank_r}, alpha={self.alpha}"


def lora_forward(x: Tensor, base_W: Tensor, base_bias, ad) -> Tensor:
    """x W^T + bias + (alpha / r) x A^T B^T, over the trailing dimension."""
    d_out, d_in = base_W.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"input dim {x.shape[-1]} != base d_in {d_in}")
    if ad.A.shape[1] != d_in or ad.B.shape[0] != d_out:
        raise DimensionError(
            f"adapter dims A{tuple(ad.A.shape)} / B{tuple(ad.B.shape)} do not "
            f"match base {d_out}x{d_in}")
    out = F.linear(x, base_W, base_bias)
    return out + (ad.alpha / ad.rank_r) * ((x @ ad.A.T) @ ad.B.T)


@dataclass
class AdapterRegistry:
    """target_name -> adapter for one adapted branch."""

    adapters: dict
    frozen_base: bool = True

    def parameter_count(self) -> int:
        return sum(ad.A.numel() + ad.B.numel() for ad in self.adapters.values())


def _attention_modules(network: nn.Module):
    for name, mod in network.named_modules():
        if all(isinstance(getattr(mod, p, None), nn.Linear) for p in QKV_NAMES):
            yield name, mod


def attach_qkv_adapters(network: nn.Module, rank_r: int, alpha: float,
                        rng: torch.Generator = None) -> AdapterRegistry:
    """Wrap every attention Q/K/V projection with a LoRA adapter.

    Output projections, MLPs, norms and embeddings stay untouched; all base
    parameters of the network are frozen.
    """
    targets = list(_attention_modules(network))
    if not targets:
        already = any(isinstance(m, LoRALinear) for m in network.modules())
        if already:
            raise ConfigurationError("network already carries LoRA adapters")
        raise ConfigurationError("network exposes no attention blocks with "
                                 "named q/k/v projections")
    for p in network.parameters():
        p.requires_grad_(False)
    adapters = {}
    for block_name, block in targets:
        for proj in QKV_NAMES:
            target = f"{block_name}.{proj}" if block_name else proj
            wrapped = LoRALinear(getattr(block, proj), rank_r=rank_r,
                                 alpha=alpha, target_name=target, rng=rng)
            setattr(block, proj, wrapped)
            adapters[target] = wrapped
    return AdapterRegistry(adapters=adapters, frozen_base=True)


def trainable_fraction(registry: AdapterRegistry, network: nn.Module) -> float:
    """Adapter parameters over total (adapter + base) parameters."""
    adapter_params = registry.parameter_count()
    if adapter_params == 0:
        return 0.0
    total = sum(p.numel() for p in network.parameters())
    return adapter_params / total
