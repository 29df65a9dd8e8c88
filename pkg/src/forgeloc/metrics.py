"""Pixel-level F1 / IoU at a fixed binarization threshold.

Per-sample metrics are macro-averaged within a dataset; datasets combine
into a weighted average by image count. Samples where prediction and
ground truth are both empty score 1.0 (authentic images predicted clean
are counted as perfect).
"""

import io
import json
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class PixelCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class DatasetReport:
    """Macro-averaged scores for one evaluated dataset."""

    name: str
    n_images: int
    f1: float
    iou: float
    threshold: float = 0.5


@dataclass(frozen=True)
class MetricReport:
    datasets: tuple
    weighted_f1: float
    weighted_iou: float
    threshold: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("dataset,n_images,f1,iou\n")
        for d in self.datasets:
            buf.write(f"{d.name},{d.n_images},{d.f1:.6f},{d.iou:.6f}\n")
        total = sum(d.n_images for d in self.datasets)
        buf.write(f"weighted_avg,{total},{self.weighted_f1:.6f},{self.weighted_iou:.6f}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "threshold": self.threshold,
            "datasets": [
                {"name": d.name, "n_images": d.n_images, "f1": d.f1, "iou": d.iou}
                for d in self.datasets
            ],
            "weighted_avg": {"f1": self.weighted_f1, "iou": self.weighted_iou},
        }, indent=2, sort_keys=True)


def binarize(pred: Tensor, threshold: float = 0.5) -> Tensor:
    """Strict threshold: 1 where pred > threshold, ties map to 0."""
    return pred > threshold


def pixel_counts(pred_bin: Tensor, gt: Tensor) -> PixelCounts:
    if pred_bin.shape != gt.shape:
        raise DimensionError(
            f"pred shape {tuple(pred_bin.shape)} != gt shape {tuple(gt.shape)}")
    p = pred_bin.bool()
    g = gt.bool()
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    tn = int((~p & ~g).sum())
    return PixelCounts(tp, fp, fn, tn)


def f1_iou(pred_bin: Tensor, gt: Tensor) -> tuple:
    """Pixel F1 and IoU from binary masks.

    Both masks empty -> (1, 1); exactly one empty -> (0, 0).
    """
    c = pixel_counts(pred_bin, gt)
    if c.tp + c.fp + c.fn == 0:
        return 1.0, 1.0
    f1 = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)
    iou = c.tp / (c.tp + c.fp + c.fn)
    return f1, iou


def aggregate(reports) -> MetricReport:
    """Size-weighted mean of per-dataset macro scores."""
    reports = list(reports)
    if not reports:
        raise ConfigurationError("no dataset reports to aggregate")
    thresholds = {r.threshold for r in reports}
    if len(thresholds) != 1:
        raise ConfigurationError(f"reports mix thresholds {sorted(thresholds)}")
    total = sum(r.n_images for r in reports)
    if total <= 0:
        raise ConfigurationError("aggregate weight (total image count) is zero")
    wf1 = sum(r.n_images * r.f1 for r in reports) / total
    wiou = sum(r.n_images * r.iou for r in reports) / total
    return MetricReport(datasets=tuple(reports), weighted_f1=wf1,
                        weighted_iou=wiou, threshold=thresholds.pop())
