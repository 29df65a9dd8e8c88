"""Dual-branch image forgery localization at desk scale.

Rectified-flow-noised latents drive a forensic denoiser branch whose
features fuse with a LoRA-adapted semantic encoder to predict pixel-level
forgery masks, plus the loss, metric, ablation, and robustness harnesses
around that pipeline.
"""

__version__ = "0.1.0"
