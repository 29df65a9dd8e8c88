"""Composition root: the dual-branch network mapping images to masks.

Branch modes mirror the component ablation: `tuned` trains LoRA adapters
(plus the forensic consolidation projection), `frozen` keeps the branch
fixed at its initialization, `removed` replaces the branch's feature map
with zeros of the configured shape so all ablation cells share one
architecture.
"""

import torch
import torch.nn as nn

from .backbones import Denoiser, LatentEncoder, SemanticEncoder
from .config import ExperimentConfig, stable_seed
from .fusion import FeatureFusion
from .head import LocalizationHead
from .lora import AdapterRegistry, attach_qkv_adapters
from .noise import make_noised_set


class ForgeryLocalizer(nn.Module):
    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        size = cfg.dataset.image_size
        grid = cfg.latent_grid
        self.ev = LatentEncoder(cfg.latent_encoder)
        self.sd = Denoiser(cfg.denoiser, in_channels=cfg.latent_encoder.latent_channels,
                           grid_size=grid, n_levels=len(cfg.noise.levels),
                           seed=stable_seed(cfg.seed, "sd"))
        self.sam = SemanticEncoder(cfg.semantic, image_size=size,
                                   seed=stable_seed(cfg.seed, "sam"))
        self.fuse = FeatureFusion(cfg.semantic.out_channels, cfg.denoiser.out_channels,
                                  cfg.fusion, seed=stable_seed(cfg.seed, "fuse"))
        self.head = LocalizationHead(cfg.fusion.fuse_channels, cfg.head,
                                     seed=stable_seed(cfg.seed, "head"))

        self.sd_registry = self._setup_branch(
            self.sd, cfg.forensic_branch, stable_seed(cfg.seed, "lora_sd"))
        self.sam_registry = self._setup_branch(
            self.sam, cfg.semantic_branch, stable_seed(cfg.seed, "lora_sam"))
        if cfg.forensic_branch == "tuned":
            # the consolidation projection trains with the branch
            self.sd.consolidate.weight.requires_grad_(True)
            self.sd.consolidate.bias.requires_grad_(True)

    def _setup_branch(self, network, mode, lora_seed) -> AdapterRegistry:
        if mode == "tuned":
            rng = torch.Generator().manual_seed(lora_seed)
            return attach_qkv_adapters(network, rank_r=self.cfg.lora_rank,
                                       alpha=self.cfg.lora_alpha, rng=rng)
        for p in network.parameters():
            p.requires_grad_(False)
        return AdapterRegistry(adapters={}, frozen_base=True)

    def forward(self, images: torch.Tensor, noise_rng: torch.Generator) -> torch.Tensor:
        squeeze = images.dim() == 3
        if squeeze:
            images = images.unsqueeze(0)
        b = images.shape[0]
        cfg = self.cfg
        grid = cfg.latent_grid
        sem_grid = cfg.dataset.image_size // cfg.semantic.patch_size

        if cfg.semantic_branch == "removed":
            f_s = torch.zeros(b, cfg.semantic.out_channels, sem_grid, sem_grid)
        else:
            f_s = self.sam(images)

        if cfg.forensic_branch == "removed":
            f_d = torch.zeros(b, cfg.denoiser.out_channels, grid, grid)
        else:
            z0 = self.ev(images)
            noised = make_noised_set(z0, cfg.noise, noise_rng)
            f_d = self.sd(noised)

        mask = self.head(self.fuse(f_s, f_d))
        return mask.squeeze(0) if squeeze else mask

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def checkpoint_tensors(model: ForgeryLocalizer) -> dict:
    """Flat tensor map: base weights under their branch namespaces, adapters
    as `lora.<target>.A` / `.B`."""
    out = {}
    for key, value in model.state_dict().items():
        if key.endswith(".A") or key.endswith(".B"):
            path, leaf = key.rsplit(".", 1)
            out[f"lora.{path}.{leaf}"] = value
        else:
            out[key.replace(".base.", ".")] = value
    return out


def load_checkpoint_tensors(model: ForgeryLocalizer, tensors: dict):
    """Inverse of checkpoint_tensors for a model built from the same config."""
    state = {}
    wrapped = {key.replace(".base.", "."): key
               for key in model.state_dict() if ".base." in key}
    for key, value in tensors.items():
        if key.startswith("lora."):
            state[key[len("lora."):]] = value
        elif key in wrapped:
            state[wrapped[key]] = value
        else:
            state[key] = value
    model.load_state_dict(state)
