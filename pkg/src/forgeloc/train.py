"""Training loop, evaluation runner, and checkpointing.

Everything is seeded through named sub-streams of the experiment seed, so
two runs with the same config produce byte-identical logs and reports.
"""

import hashlib
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import (ExperimentConfig, config_from_dict, config_hash,
                     config_to_dict, save_config, stable_seed)
from .errors import ConfigurationError, ForgeLocError, FormatError
from .forgegen import read_dataset, write_dataset
from .losses import bce_loss, dice_loss
from .metrics import DatasetReport, MetricReport, aggregate, binarize, f1_iou
from .model import ForgeryLocalizer, checkpoint_tensors, load_checkpoint_tensors

ENV_OUTPUT_ROOT = "FORGELOC_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "."))


def resolve(path_field: str) -> Path:
    p = Path(path_field)
    return p if p.is_absolute() else output_root() / p


def ensure_dataset(cfg: ExperimentConfig) -> Path:
    data_dir = resolve(cfg.data_dir)
    if not (data_dir / "manifest.json").is_file():
        write_dataset(cfg.dataset, data_dir)
    return data_dir


def samples_to_tensors(samples):
    images = torch.stack([torch.from_numpy(s.image) for s in samples])
    masks = torch.stack([torch.from_numpy(s.mask.astype(np.float32)).unsqueeze(0)
                         for s in samples])
    return images, masks


def predict_masks(model: ForgeryLocalizer, images: torch.Tensor,
                  noise_seed: int, batch_size: int) -> torch.Tensor:
    """Probability masks in deterministic batch order with a per-call
    noise stream; shared by validation, evaluation and the attack sweep."""
    model.eval()
    rng = torch.Generator().manual_seed(noise_seed)
    preds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            batch = images[start:start + batch_size]
            preds.append(model(batch, rng))
    return torch.cat(preds, dim=0)


def param_checksums(model) -> dict:
    return {name: hashlib.sha256(p.detach().numpy().tobytes()).hexdigest()
            for name, p in model.named_parameters()}


def _first_nan_name(model, pred, parts):
    for label, value in parts.items():
        if not torch.isfinite(value).all():
            return label
    if not torch.isfinite(pred).all():
        return "prediction"
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            return name
    return "unknown"


def evaluate_samples(model: ForgeryLocalizer, cfg: ExperimentConfig, samples,
                     out_dir=None, threshold: float = 0.5) -> MetricReport:
    """Per-kind macro F1/IoU plus the size-weighted aggregate; optionally
    dumps probability and binarized masks as PNGs."""
    if not samples:
        raise ConfigurationError("no samples to evaluate")
    images, _ = samples_to_tensors(samples)
    preds = predict_masks(model, images, stable_seed(cfg.seed, "eval_noise"),
                          cfg.train.batch_size)
    scores = {}
    for sample, pred in zip(samples, preds):
        pred_mask = pred[0]
        gt = torch.from_numpy(sample.mask)
        f1, iou = f1_iou(binarize(pred_mask, threshold), gt)
        scores.setdefault(sample.kind, []).append((f1, iou))
        if out_dir is not None:
            prob_dir = Path(out_dir) / "masks_prob"
            bin_dir = Path(out_dir) / "masks_bin"
            prob_dir.mkdir(parents=True, exist_ok=True)
            bin_dir.mkdir(parents=True, exist_ok=True)
            prob = np.round(pred_mask.numpy() * 255.0).astype(np.uint8)
            Image.fromarray(prob, "L").save(prob_dir / f"{sample.id}.png")
            hard = (binarize(pred_mask, threshold).numpy().astype(np.uint8) * 255)
            Image.fromarray(hard, "L").save(bin_dir / f"{sample.id}.png")
    reports = []
    for kind in sorted(scores):
        pairs = scores[kind]
        reports.append(DatasetReport(
            name=kind, n_images=len(pairs),
            f1=sum(p[0] for p in pairs) / len(pairs),
            iou=sum(p[1] for p in pairs) / len(pairs),
            threshold=threshold))
    return aggregate(reports)


def save_checkpoint(model, optimizer, epoch, cfg, path, best_val_f1=None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "tensors": checkpoint_tensors(model),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "torch_rng": torch.get_rng_state(),
        "best_val_f1": best_val_f1,
    }, path)


def load_checkpoint(path, expect_cfg: ExperimentConfig = None):
    """Model rebuilt from the stored config; refuses hash mismatches."""
    data = torch.load(path, weights_only=False)
    cfg = config_from_dict(data["config"])
    if config_hash(cfg) != data["config_hash"]:
        raise FormatError(f"checkpoint {path} config hash mismatch")
    if expect_cfg is not None and config_hash(expect_cfg) != data["config_hash"]:
        raise ConfigurationError(
            "checkpoint was produced under a different configuration")
    model = ForgeryLocalizer(cfg)
    load_checkpoint_tensors(model, data["tensors"])
    return model, cfg, data


def _val_split(n: int, cfg: ExperimentConfig):
    n_val = max(1, int(round(cfg.train.val_fraction * n)))
    g = torch.Generator().manual_seed(stable_seed(cfg.seed, "valsplit"))
    perm = torch.randperm(n, generator=g)
    return perm[n_val:], perm[:n_val]


def train(cfg: ExperimentConfig) -> dict:
    """End-to-end training; returns paths and the best validation scores."""
    run_dir = resolve(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.json")
    torch.manual_seed(stable_seed(cfg.seed, "torch"))

    data_dir = ensure_dataset(cfg)
    samples = read_dataset(data_dir, split="train")
    images, masks = samples_to_tensors(samples)
    train_idx, val_idx = _val_split(len(samples), cfg)
    val_images, val_masks = images[val_idx], masks[val_idx]

    model = ForgeryLocalizer(cfg)
    params = model.trainable_parameters()
    if not params:
        raise ConfigurationError("no trainable parameters under this config")
    opt = torch.optim.Adam(params, lr=cfg.optimizer.lr, betas=cfg.optimizer.betas,
                           weight_decay=cfg.optimizer.weight_decay)

    noise_rng = torch.Generator().manual_seed(stable_seed(cfg.seed, "train_noise"))
    shuffle_rng = torch.Generator().manual_seed(stable_seed(cfg.seed, "shuffle"))
    bs = cfg.train.batch_size
    w = cfg.loss

    step_rows = ["step,epoch,bce,dice,total"]
    epoch_rows = ["epoch,train_bce,train_dice,train_total,val_f1,val_iou"]
    best_f1, best_epoch = -1.0, -1
    step = 0
    for epoch in range(cfg.train.epochs):
        model.train()
        perm = train_idx[torch.randperm(len(train_idx), generator=shuffle_rng)]
        sums = {"bce": 0.0, "dice": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(perm), bs):
            idx = perm[start:start + bs]
            pred = model(images[idx], noise_rng)
            l_bce = bce_loss(pred, masks[idx])
            l_dice = dice_loss(pred, masks[idx], w.epsilon_smooth)
            total = w.lambda_bce * l_bce + w.lambda_dice * l_dice
            if not torch.isfinite(total):
                culprit = _first_nan_name(model, pred,
                                          {"bce": l_bce, "dice": l_dice})
                raise ForgeLocError(
                    f"non-finite loss at step {step}; first NaN tensor: {culprit}")
            opt.zero_grad()
            total.backward()
            opt.step()
            vals = {"bce": l_bce.item(), "dice": l_dice.item(), "total": total.item()}
            step_rows.append(f"{step},{epoch},{vals['bce']!r},"
                             f"{vals['dice']!r},{vals['total']!r}")
            for key in sums:
                sums[key] += vals[key]
            n_batches += 1
            step += 1

        val_pred = predict_masks(model, val_images,
                                 stable_seed(cfg.seed, "val_noise"), bs)
        f1s, ious = [], []
        for p, m in zip(val_pred, val_masks):
            f1, iou = f1_iou(binarize(p[0]), m[0] > 0.5)
            f1s.append(f1)
            ious.append(iou)
        val_f1 = sum(f1s) / len(f1s)
        val_iou = sum(ious) / len(ious)
        epoch_rows.append(
            f"{epoch},{sums['bce'] / n_batches!r},{sums['dice'] / n_batches!r},"
            f"{sums['total'] / n_batches!r},{val_f1!r},{val_iou!r}")

        if val_f1 > best_f1:
            best_f1, best_epoch = val_f1, epoch
            save_checkpoint(model, opt, epoch, cfg,
                            run_dir / "checkpoint_best.pt", best_val_f1=best_f1)

    save_checkpoint(model, opt, cfg.train.epochs - 1, cfg,
                    run_dir / "checkpoint_last.pt", best_val_f1=best_f1)
    (run_dir / "train_steps.csv").write_text("\n".join(step_rows) + "\n")
    (run_dir / "epochs.csv").write_text("\n".join(epoch_rows) + "\n")
    return {
        "run_dir": str(run_dir),
        "best_val_f1": best_f1,
        "best_epoch": best_epoch,
        "best_checkpoint": str(run_dir / "checkpoint_best.pt"),
        "last_checkpoint": str(run_dir / "checkpoint_last.pt"),
    }


def evaluate_checkpoint(ckpt_path, split: str = "test", data_dir=None,
                        out_dir=None, threshold: float = 0.5) -> MetricReport:
    model, cfg, _ = load_checkpoint(ckpt_path)
    data_dir = Path(data_dir) if data_dir else ensure_dataset(cfg)
    samples = read_dataset(data_dir, split=split)
    if out_dir is None:
        out_dir = resolve(cfg.output_dir) / f"eval_{split}"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate_samples(model, cfg, samples, out_dir=out_dir,
                              threshold=threshold)
    (out_dir / "report.csv").write_text(report.to_csv())
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    return report
