"""Experiment configuration: nested dataclasses, JSON (de)serialization,
dotted-path CLI overrides, and the config hash used to guard checkpoints."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backbones import DenoiserConfig, LatentEncoderConfig, SemanticEncoderConfig
from .errors import ConfigurationError
from .forgegen import DatasetSpec
from .fusion import FusionConfig
from .head import HeadConfig
from .losses import LossWeights
from .noise import NoiseConfig

BRANCH_MODES = ("tuned", "frozen", "removed")


def stable_seed(seed: int, tag: str) -> int:
    """Deterministic sub-seed for one named RNG stream."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 2 ** 63


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigurationError(f"unsupported optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie in (0, 1)")


def _default_dataset():
    return DatasetSpec(counts={"train": 512, "test": 64})


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=_default_dataset)
    latent_encoder: LatentEncoderConfig = field(default_factory=LatentEncoderConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    semantic: SemanticEncoderConfig = field(default_factory=SemanticEncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    lora_rank: int = 4
    lora_alpha: float = 4.0
    forensic_branch: str = "tuned"  # tuned | frozen | removed
    semantic_branch: str = "tuned"
    seed: int = 0
    data_dir: str = "data/synthetic"
    output_dir: str = "runs/default"

    def __post_init__(self):
        size = self.dataset.image_size
        factor = self.latent_encoder.downsample_factor
        if size % factor:
            raise ConfigurationError(
                f"image size {size} not divisible by latent factor {factor}")
        if size % self.semantic.patch_size:
            raise ConfigurationError(
                f"image size {size} not divisible by patch {self.semantic.patch_size}")
        if self.head.upsample_scale != factor:
            raise ConfigurationError(
                f"head upsample scale {self.head.upsample_scale} must equal the "
                f"latent downsample factor {factor} (fixed output geometry)")
        for mode in (self.forensic_branch, self.semantic_branch):
            if mode not in BRANCH_MODES:
                raise ConfigurationError(
                    f"branch mode {mode!r} not one of {BRANCH_MODES}")
        if self.lora_rank < 1 or self.lora_alpha <= 0:
            raise ConfigurationError("lora_rank must be >= 1 and lora_alpha > 0")

    @property
    def latent_grid(self) -> int:
        return self.dataset.image_size // self.latent_encoder.downsample_factor


def config_to_dict(cfg) -> dict:
    """Nested plain-type dict (tuples become lists)."""
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        return value
    return convert(cfg)


_SECTION_TYPES = {
    "dataset": DatasetSpec,
    "latent_encoder": LatentEncoderConfig,
    "denoiser": DenoiserConfig,
    "semantic": SemanticEncoderConfig,
    "fusion": FusionConfig,
    "head": HeadConfig,
    "noise": NoiseConfig,
    "loss": LossWeights,
    "optimizer": OptimizerConfig,
    "train": TrainConfig,
}


def _build(cls, data):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} for {cls.__name__}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            value = data[f.name]
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    kwargs = {}
    for key, cls in _SECTION_TYPES.items():
        if key in data:
            section = data.pop(key)
            if not isinstance(section, dict):
                raise ConfigurationError(f"section {key!r} must be a mapping")
            kwargs[key] = _build(cls, section)
    scalar_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - scalar_names
    if unknown:
        raise ConfigurationError(f"unknown config key(s) {sorted(unknown)}")
    kwargs.update(data)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def save_config(cfg: ExperimentConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def apply_overrides(data: dict, overrides) -> dict:
    """Apply `a.b.c=value` assignments; values parse as JSON, else strings."""
    data = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of form key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override path {path!r} crosses a leaf")
        node[keys[-1]] = value
    return data
