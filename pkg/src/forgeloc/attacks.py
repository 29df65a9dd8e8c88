"""Post-processing robustness attacks and the evaluation sweep.

Four attacks at sweepable intensities: JPEG round-trip, additive Gaussian
noise, Gaussian blur, and a bilinear resize round-trip. Attacks touch the
image only; ground-truth masks always pass through untouched.
"""

import io
import math
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .errors import ConfigurationError, DomainError
from .filters import gaussian_blur
from .forgegen import _stable_hash
from .metrics import binarize, f1_iou

ATTACK_KINDS = ("jpeg", "gauss_noise", "gauss_blur", "resize")

_RANGES = {
    "jpeg": (1, 100),
    "gauss_noise": (0.0, 1.0),
    "gauss_blur": (0.0, 10.0),
    "resize": (0.1, 4.0),
}

DEFAULT_GRIDS = {
    "jpeg": (90, 70, 50, 30),
    "gauss_noise": (0.02, 0.05, 0.1),
    "gauss_blur": (0.5, 1.0, 2.0),
    "resize": (0.5, 0.75, 1.25),
}


def _check_intensity(kind, intensity):
    lo, hi = _RANGES[kind]
    if not lo <= intensity <= hi:
        raise DomainError(
            f"{kind} intensity {intensity} outside [{lo}, {hi}]")
    if kind == "jpeg" and int(intensity) != intensity:
        raise DomainError(f"jpeg quality must be integral, got {intensity}")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    grid: tuple

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(
                f"unknown attack {self.kind!r}, expected one of {ATTACK_KINDS}")
        object.__setattr__(self, "grid", tuple(self.grid))
        if not self.grid:
            raise ConfigurationError(f"attack {self.kind!r} has an empty grid")
        for v in self.grid:
            _check_intensity(self.kind, v)


def default_attack_suite():
    return tuple(AttackSpec(kind, DEFAULT_GRIDS[kind]) for kind in ATTACK_KINDS)


def _resize_channels(img: np.ndarray, size) -> np.ndarray:
    out = np.empty((img.shape[0],) + tuple(size[::-1]), dtype=np.float32)
    for c in range(img.shape[0]):
        f = Image.fromarray(img[c].astype(np.float32), mode="F")
        out[c] = np.asarray(f.resize(size, Image.BILINEAR), dtype=np.float32)
    return out


def apply_attack(image: np.ndarray, kind: str, intensity,
                 rng: np.random.Generator = None) -> np.ndarray:
    """One attacked copy of a (3, H, W) float image in [0, 1]."""
    if kind not in ATTACK_KINDS:
        raise ConfigurationError(f"unknown attack {kind!r}")
    _check_intensity(kind, intensity)

    if kind == "jpeg":
        rgb = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
        buf = io.BytesIO()
        Image.fromarray(rgb, "RGB").save(buf, format="JPEG", quality=int(intensity))
        buf.seek(0)
        decoded = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32)
        return (decoded / 255.0).transpose(2, 0, 1)

    if kind == "gauss_noise":
        if intensity == 0.0:
            return image.copy()
        if rng is None:
            raise ConfigurationError("gauss_noise requires a seeded rng")
        noisy = image + rng.normal(0.0, intensity, image.shape)
        return np.clip(noisy, 0.0, 1.0).astype(np.float32)

    if kind == "gauss_blur":
        out = gaussian_blur(image, float(intensity),
                            radius=int(math.ceil(3.0 * intensity)) if intensity else None)
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    # resize: bilinear to factor * size, then bilinear back to the original
    h, w = image.shape[-2:]
    nh, nw = max(int(round(h * intensity)), 1), max(int(round(w * intensity)), 1)
    down = _resize_channels(image, (nw, nh))
    back = _resize_channels(down, (w, h))
    return np.clip(back, 0.0, 1.0).astype(np.float32)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _macro_scores(pred_masks, samples, threshold):
    f1s, ious = [], []
    for pred, sample in zip(pred_masks, samples):
        pred_t = torch.as_tensor(np.asarray(pred)).reshape(sample.mask.shape)
        gt_t = torch.as_tensor(sample.mask)
        f1, iou = f1_iou(binarize(pred_t, threshold), gt_t)
        f1s.append(f1)
        ious.append(iou)
    n = len(samples)
    return sum(f1s) / n, sum(ious) / n


def robustness_curve(predict_fn, samples, suite=None, threshold: float = 0.5,
                     attack_seed: int = 0) -> list:
    """F1/IoU of `predict_fn` under every attack intensity.

    `predict_fn` maps a list of (3, H, W) float images to per-image
    probability masks; it is also used for the per-attack clean baseline
    row, so the baseline equals a standard evaluation of the same samples.
    Rows are ordered by attack, then clean first, then grid order.
    """
    if suite is None:
        suite = default_attack_suite()
    samples = list(samples)
    if not samples:
        raise ConfigurationError("robustness_curve needs at least one sample")
    rows = []
    clean_images = [s.image for s in samples]
    for spec in suite:
        f1, iou = _macro_scores(predict_fn(clean_images), samples, threshold)
        rows.append({"attack": spec.kind, "intensity": None,
                     "n_images": len(samples), "f1": f1, "iou": iou})
        for intensity in spec.grid:
            attacked = []
            for s in samples:
                rng = np.random.default_rng(
                    [attack_seed % 2 ** 63, _stable_hash(f"{spec.kind}:{s.id}")])
                attacked.append(apply_attack(s.image, spec.kind, intensity, rng))
            f1, iou = _macro_scores(predict_fn(attacked), samples, threshold)
            rows.append({"attack": spec.kind, "intensity": intensity,
                         "n_images": len(samples), "f1": f1, "iou": iou})
    return rows


def curve_to_csv(rows) -> str:
    lines = ["attack,intensity,n_images,f1,iou"]
    for r in rows:
        intensity = "clean" if r["intensity"] is None else repr(r["intensity"])
        lines.append(f"{r['attack']},{intensity},{r['n_images']},"
                     f"{r['f1']:.6f},{r['iou']:.6f}")
    return "\n".join(lines) + "\n"
