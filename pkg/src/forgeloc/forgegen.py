"""Deterministic synthetic forgery dataset generator.

Procedural base images (color gradient + band-limited texture + smooth
shapes) are manipulated by splicing donor content, copy-moving a region
within the image, or removal via blurred surrounding-texture infill.
Pasting is feathered up to ~2 px; the stored mask is the hard region.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError, DomainError, FormatError
from .filters import gaussian_blur

KINDS = ("splice", "copymove", "removal", "authentic")

# sampled hard-region area fraction; stays inside the contractual [0.02, 0.5]
REGION_FRAC = (0.08, 0.40)
MIN_MASK_PIXELS = 16
MAX_TRIES = 16
FEATHER_SIGMA = 0.7
# minimum per-pixel change (max over channels) for a pasted pixel to count
# as visibly forged; above the 8-bit quantization step
CHANGE_TOL = 0.004


@dataclass
class ForgerySample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) uint8 in {0, 1}
    kind: str
    id: str
    split: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown forgery kind {self.kind!r}")
        vals = np.unique(self.mask)
        if not set(vals.tolist()).issubset({0, 1}):
            raise ConfigurationError(f"mask of {self.id!r} is not binary")
        frac = float(self.mask.mean())
        if self.kind == "authentic":
            if frac != 0.0:
                raise ConfigurationError(
                    f"authentic sample {self.id!r} has a nonempty mask")
        elif not 0.02 <= frac <= 0.5:
            raise ConfigurationError(
                f"mask fraction {frac:.4f} of {self.id!r} outside [0.02, 0.5]")


@dataclass(frozen=True)
class DatasetSpec:
    counts: dict  # split name -> sample count
    image_size: int = 64
    mix: dict = field(default_factory=lambda: {
        "splice": 0.4, "copymove": 0.3, "removal": 0.2, "authentic": 0.1})
    seed: int = 0

    def __post_init__(self):
        if not self.counts:
            raise ConfigurationError("counts must name at least one split")
        for split, n in self.counts.items():
            if n <= 0:
                raise ConfigurationError(f"split {split!r} count must be > 0")
        if self.image_size < 16:
            raise ConfigurationError("image_size must be >= 16")
        for kind in self.mix:
            if kind not in KINDS:
                raise ConfigurationError(f"unknown kind {kind!r} in mix")
        if any(p < 0 for p in self.mix.values()):
            raise ConfigurationError("mix proportions must be non-negative")
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise ConfigurationError("mix proportions must sum to 1")


def _resize_bilinear(ch: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(ch.astype(np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def gen_base_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Procedural natural-ish image: low-frequency gradient, band-limited
    texture, and 1-4 soft shapes."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    img = np.empty((3, size, size), dtype=np.float32)
    for c in range(3):
        level = rng.uniform(0.3, 0.7)
        gx, gy = rng.uniform(-0.35, 0.35, 2)
        img[c] = level + gx * (xs - 0.5) + gy * (ys - 0.5)

    for scale, amp in ((8, 0.10), (4, 0.05)):
        cells = max(size // scale, 2)
        coarse = rng.normal(0.0, 1.0, (3, cells, cells))
        for c in range(3):
            img[c] += amp * _resize_bilinear(coarse[c], size)

    ys_px, xs_px = np.mgrid[0:size, 0:size].astype(np.float32)
    for _ in range(int(rng.integers(1, 5))):
        cx, cy = rng.uniform(0.15, 0.85, 2) * size
        rx, ry = rng.uniform(0.10, 0.30, 2) * size
        theta = rng.uniform(0.0, math.pi)
        color = rng.uniform(-0.3, 0.3, 3).astype(np.float32)
        dx, dy = xs_px - cx, ys_px - cy
        u = (dx * math.cos(theta) + dy * math.sin(theta)) / rx
        v = (-dx * math.sin(theta) + dy * math.cos(theta)) / ry
        r = np.sqrt(u * u + v * v)
        alpha = np.clip(1.6 - 1.6 * r, 0.0, 1.0)
        img += color[:, None, None] * alpha[None]

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _sample_region_mask(rng, size):
    """Random star-convex polygon rasterized to a hard binary mask."""
    for _ in range(MAX_TRIES):
        n_vert = int(rng.integers(5, 10))
        cx, cy = rng.uniform(0.25, 0.75, 2) * size
        target = rng.uniform(*REGION_FRAC)
        base_r = size * math.sqrt(target / math.pi)
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n_vert))
        radii = base_r * rng.uniform(0.7, 1.3, n_vert)
        pts = [(cx + r * math.cos(a), cy + r * math.sin(a))
               for a, r in zip(angles, radii)]
        canvas = Image.new("L", (size, size), 0)
        ImageDraw.Draw(canvas).polygon(pts, fill=1)
        mask = np.asarray(canvas, dtype=np.uint8)
        frac = mask.mean()
        if 0.02 <= frac <= 0.5 and mask.sum() >= MIN_MASK_PIXELS:
            return mask
    raise DomainError(f"no valid forgery region after {MAX_TRIES} attempts")


def _erode(mask: np.ndarray, iterations: int = 2) -> np.ndarray:
    m = mask.astype(bool)
    for _ in range(iterations):
        p = np.pad(m, 1, constant_values=False)
        m = (p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1]
             & p[1:-1, :-2] & p[1:-1, 2:])
    return m


def _composite(base, content, mask):
    alpha = gaussian_blur(mask.astype(np.float32)[None], FEATHER_SIGMA)[0]
    alpha = np.maximum(alpha, mask.astype(np.float32))  # hard interior
    forged = base * (1.0 - alpha[None]) + content * alpha[None]
    return np.clip(forged, 0.0, 1.0).astype(np.float32)


def _displace(rng, mask, size):
    """Pick a shift keeping the region in frame and visibly moved."""
    ys, xs = np.nonzero(mask)
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    min_d = max(4, size // 8)
    for _ in range(MAX_TRIES):
        dy = int(rng.integers(-y0, size - 1 - y1 + 1))
        dx = int(rng.integers(-x0, size - 1 - x1 + 1))
        if max(abs(dx), abs(dy)) >= min_d:
            return dy, dx
    return None


def _removal_infill(base, mask):
    area = float(mask.sum())
    sigma = max(3.0, 0.5 * math.sqrt(area))
    keep = (1.0 - mask).astype(np.float32)
    weight = gaussian_blur(keep[None], sigma)[0]
    smeared = gaussian_blur(base * keep[None], sigma)
    return smeared / np.maximum(weight, 1e-6)[None]


def apply_forgery(base: np.ndarray, donor: np.ndarray, kind: str,
                  rng: np.random.Generator, sample_id: str = "") -> ForgerySample:
    """Forge `base` with content per `kind`; the mask marks exactly the
    pasted/filled hard region."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown forgery kind {kind!r}")
    if base.shape != donor.shape:
        raise ConfigurationError(
            f"base {base.shape} and donor {donor.shape} sizes differ")
    size = base.shape[-1]

    if kind == "authentic":
        mask = np.zeros(base.shape[-2:], dtype=np.uint8)
        return ForgerySample(image=base.copy(), mask=mask, kind=kind, id=sample_id)

    for _ in range(MAX_TRIES):
        mask = _sample_region_mask(rng, size)
        if kind == "splice":
            forged = _composite(base, donor, mask)
        elif kind == "copymove":
            shift = _displace(rng, mask, size)
            if shift is None:
                continue
            dy, dx = shift
            mask = np.roll(mask, (dy, dx), axis=(0, 1))
            content = np.roll(base, (dy, dx), axis=(1, 2))
            forged = _composite(base, content, mask)
        else:  # removal
            forged = _composite(base, _removal_infill(base, mask), mask)

        interior = _erode(mask)
        if not interior.any():
            interior = mask.astype(bool)
        changed = np.abs(forged - base).max(axis=0) > CHANGE_TOL
        if changed[interior].mean() >= 0.9:
            return ForgerySample(image=forged, mask=mask, kind=kind, id=sample_id)
    raise DomainError(
        f"could not produce a visibly forged {kind} region in {MAX_TRIES} tries")


def kind_allocation(count: int, mix: dict) -> dict:
    """Largest-remainder allocation of `count` samples over the mix, in
    fixed kind order so the result is deterministic."""
    kinds = [k for k in KINDS if k in mix]
    floors = {k: int(math.floor(count * mix[k])) for k in kinds}
    remainder = count - sum(floors.values())
    fracs = sorted(kinds, key=lambda k: (-(count * mix[k] - floors[k]), KINDS.index(k)))
    for k in fracs[:remainder]:
        floors[k] += 1
    return floors


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _sample_rng(spec: DatasetSpec, sample_id: str) -> np.random.Generator:
    return np.random.default_rng([spec.seed % 2 ** 63, _stable_hash(sample_id)])


def generate_dataset(spec: DatasetSpec):
    """All samples for every split, deterministic in the spec alone."""
    samples = []
    for split in sorted(spec.counts):
        alloc = kind_allocation(spec.counts[split], spec.mix)
        kinds_seq = [k for k in KINDS if k in alloc for _ in range(alloc[k])]
        for i, kind in enumerate(kinds_seq):
            sid = f"{split}_{i:05d}"
            rng = _sample_rng(spec, sid)
            base = gen_base_image(rng, spec.image_size)
            donor = gen_base_image(rng, spec.image_size)
            sample = apply_forgery(base, donor, kind, rng, sample_id=sid)
            sample.split = split
            samples.append(sample)
    return samples


def write_dataset(spec: DatasetSpec, out_dir) -> list:
    """Generate and persist `images/<id>.png`, `masks/<id>.png` (0/255)
    and `manifest.json`."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(spec)
    entries = []
    for s in samples:
        rgb = np.round(s.image * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, "RGB").save(out / "images" / f"{s.id}.png")
        Image.fromarray(s.mask * 255, "L").save(out / "masks" / f"{s.id}.png")
        entries.append({"id": s.id, "kind": s.kind, "split": s.split,
                        "seed": _stable_hash(s.id)})
    manifest = {
        "image_size": spec.image_size,
        "seed": spec.seed,
        "mix": spec.mix,
        "counts": spec.counts,
        "entries": entries,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return samples


def read_dataset(data_dir, split: str = None) -> list:
    """Exact inverse of write_dataset up to 8-bit quantization."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest.json under {data_dir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    size = manifest["image_size"]
    samples = []
    for entry in manifest["entries"]:
        if split is not None and entry["split"] != split:
            continue
        sid = entry["id"]
        img_path = data_dir / "images" / f"{sid}.png"
        mask_path = data_dir / "masks" / f"{sid}.png"
        if not img_path.is_file():
            raise FormatError(f"image file missing for id {sid}")
        if not mask_path.is_file():
            raise FormatError(f"mask file missing for id {sid}")
        image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32)
        mask_raw = np.asarray(Image.open(mask_path), dtype=np.uint8)
        if image.shape[:2] != (size, size) or mask_raw.shape != (size, size):
            raise FormatError(f"size mismatch for id {sid}")
        if not set(np.unique(mask_raw).tolist()).issubset({0, 255}):
            raise FormatError(f"mask of id {sid} is not 0/255")
        samples.append(ForgerySample(
            image=(image / 255.0).transpose(2, 0, 1),
            mask=(mask_raw > 127).astype(np.uint8),
            kind=entry["kind"], id=sid, split=entry["split"]))
    return samples
