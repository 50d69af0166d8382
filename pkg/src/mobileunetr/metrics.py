"""Segmentation loss and confusion-matrix metrics (SE, SP, ACC, IoU, Dice)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

DICE_SMOOTH = 1.0


def segmentation_loss(logits: Tensor, masks) -> Tensor:
    """0.5 * BCE(sigmoid(logits), masks) + 0.5 * soft Dice loss (smoothing 1)."""
    masks = masks if isinstance(masks, Tensor) else Tensor(masks)
    if logits.shape != masks.shape:
        raise DimensionError(f"loss: logits {logits.shape} vs masks {masks.shape}")
    bce = ad.bce_with_logits(logits, masks)
    p = ad.sigmoid(logits)
    inter = ad.sum(ad.mul(p, masks))
    denom = ad.add(ad.add(ad.sum(p), float(masks.data.sum())), DICE_SMOOTH)
    dice = ad.div(ad.add(ad.mul(inter, 2.0), DICE_SMOOTH), denom)
    return ad.add(ad.mul(bce, 0.5), ad.mul(ad.sub(1.0, dice), 0.5))


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    # Empty denominators score 1.0 when the prediction agrees with an empty
    # ground-truth class, else 0.0.
    @property
    def SE(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float(self.fp == 0)

    @property
    def SP(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else float(self.fn == 0)

    @property
    def ACC(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 1.0

    @property
    def IoU(self) -> float:
        d = self.tp + self.fp + self.fn
        return self.tp / d if d else 1.0

    @property
    def Dice(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 1.0

    def __add__(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"SE": self.SE, "SP": self.SP, "ACC": self.ACC, "IoU": self.IoU, "Dice": self.Dice,
                "TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn}

    def format(self) -> str:
        return "  ".join(f"{k} {100 * getattr(self, k):6.2f}" for k in ("SE", "SP", "ACC", "IoU", "Dice"))


def _binary(x, label: str) -> np.ndarray:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{label} must be binary (values 0 and 1 only)")
    return arr.astype(bool)


def compute_metrics(pred_mask, gt_mask) -> MetricsReport:
    pred, gt = _binary(pred_mask, "pred_mask"), _binary(gt_mask, "gt_mask")
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return MetricsReport(tp, fp, pred.size - tp - fp - fn, fn)


def binarize(probabilities: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probabilities) >= threshold).astype(np.float32)
