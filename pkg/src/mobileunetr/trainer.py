"""Training loop: seeded shuffling and flips, AdamW, warmup + cosine schedule,
periodic validation and checkpointing."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .data import SampleBatch
from .errors import NonFiniteError, TrainingDivergedError
from .metrics import MetricsReport, binarize, compute_metrics, segmentation_loss
from .model import MobileUNETR
from .optim import OptimState, ScheduleSpec, adamw_step, decay_mask, lr_at

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"
RUN_NAME = "run.json"


@dataclass
class TrainResult:
    final_checkpoint: Path
    log_path: Path
    history: list[dict] = field(default_factory=list)
    best_checkpoint: Optional[Path] = None
    optimizer: Optional[OptimState] = None


def split_indices(n: int, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic split by index: the last ``round(n * val_fraction)`` samples validate."""
    n_val = int(round(n * val_fraction))
    if n_val >= n:
        raise ValueError(f"validation fraction {val_fraction} leaves no training samples out of {n}")
    return np.arange(n - n_val), np.arange(n - n_val, n)


def augment(images: np.ndarray, masks: np.ndarray, seed: int, epoch: int, indices: np.ndarray):
    """Horizontal and vertical flips, each with probability 0.5, seeded per sample."""
    images, masks = images.copy(), masks.copy()
    for row, idx in enumerate(indices):
        hflip, vflip = np.random.default_rng([seed, epoch, int(idx)]).random(2) < 0.5
        if hflip:
            images[row] = images[row, :, :, ::-1]
            masks[row] = masks[row, :, :, ::-1]
        if vflip:
            images[row] = images[row, :, ::-1, :]
            masks[row] = masks[row, :, ::-1, :]
    return images, masks


def evaluate(model: MobileUNETR, dataset: SampleBatch, batch_size: int = 8, threshold: float = 0.5) -> MetricsReport:
    """Pixel-pooled confusion counts over the whole dataset, in eval mode."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    was_training = model.training
    report = MetricsReport(0, 0, 0, 0)
    try:
        for start in range(0, len(dataset), batch_size):
            probs = model.predict_proba(dataset.images[start:start + batch_size])
            report = report + compute_metrics(binarize(probs, threshold), dataset.masks[start:start + batch_size])
    finally:
        model.train(was_training)
    return report


def train_step(model: MobileUNETR, images: np.ndarray, masks: np.ndarray, state: OptimState, lr: float) -> float:
    params = model.parameters()
    model.train(True)
    with Tape() as tape:
        logits = model(Tensor(images))
        loss = segmentation_loss(logits, Tensor(masks))
    value = float(loss.item())
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    ad.backward(loss, tape)
    adamw_step(params, [p.grad for p in params], state, lr)
    model.zero_grad()
    return value


def train(model: MobileUNETR, dataset: SampleBatch, spec: ScheduleSpec = ScheduleSpec(), batch_size: int = 8,
          seed: int = 0, out_dir: Union[str, Path] = "run", epochs: Optional[int] = None,
          val_fraction: float = 0.2, checkpoint_every: Optional[int] = 50, weight_decay: float = 0.01,
          state: Optional[OptimState] = None) -> TrainResult:
    """Optimize ``model`` on ``dataset``; returns paths to the final checkpoint and the log.

    ``epochs`` stops early (default ``spec.total_epochs``); the schedule is
    always evaluated against ``spec``. With ``val_fraction`` 0 every sample
    trains and validation fields are logged as null.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    epochs = spec.total_epochs if epochs is None else epochs
    if not 0 < epochs <= spec.total_epochs:
        raise ValueError(f"epochs must lie in [1, {spec.total_epochs}], got {epochs}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, val_idx = split_indices(len(dataset), val_fraction)
    train_set, val_set = dataset.subset(train_idx), dataset.subset(val_idx)
    params = model.parameters()
    if state is None:
        state = OptimState.for_params(params, decay_mask(params), weight_decay=weight_decay, base_lr=spec.base_lr)

    run_info = {
        "schedule": {"base_lr": spec.base_lr, "warmup_epochs": spec.warmup_epochs,
                     "total_epochs": spec.total_epochs, "min_lr": spec.min_lr},
        "epochs": epochs, "batch_size": batch_size, "seed": seed,
        "train_samples": len(train_idx), "val_samples": len(val_idx),
        "weight_decay": weight_decay, "augmentation": "hflip p=0.5, vflip p=0.5",
        "metric_aggregation": "pixel-pooled over the validation set",
        "config": model.config.to_dict(),
    }
    (out / RUN_NAME).write_text(json.dumps(run_info, indent=2) + "\n", encoding="utf-8")

    log_path = out / LOG_NAME
    history: list[dict] = []
    best_dice, best_path = -1.0, None
    steps = math.ceil(len(train_idx) / batch_size)
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(epochs):
            t0 = time.perf_counter()
            order = np.random.default_rng([seed, epoch]).permutation(len(train_idx))
            losses = []
            lr = lr_at(epoch, spec)
            for b in range(steps):
                rows = order[b * batch_size:(b + 1) * batch_size]
                images, masks = augment(train_set.images[rows], train_set.masks[rows], seed, epoch, train_idx[rows])
                lr = lr_at(epoch + b / steps, spec)
                try:
                    losses.append(train_step(model, images, masks, state, lr))
                except NonFiniteError as exc:
                    raise TrainingDivergedError(epoch, b, lr, str(exc)) from exc
            record = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses)),
                      "val_iou": None, "val_dice": None}
            if len(val_idx):
                report = evaluate(model, val_set, batch_size)
                record["val_iou"], record["val_dice"] = report.IoU, report.Dice
                if report.Dice > best_dice:
                    best_dice = report.Dice
                    best_path = save_checkpoint(model, state, out / "best.mutr", {"epoch": epoch + 1})
            record["seconds"] = round(time.perf_counter() - t0, 3)
            log.write(json.dumps(record) + "\n")
            log.flush()
            history.append(record)
            logger.info("epoch %d lr %.3g loss %.4f val_dice %s", epoch + 1, lr, record["train_loss"],
                        record["val_dice"])
            if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_checkpoint(model, state, out / f"epoch_{epoch + 1:04d}.mutr", {"epoch": epoch + 1})
    final = save_checkpoint(model, state, out / "last.mutr", {"epoch": epochs})
    return TrainResult(final, log_path, history, best_path, state)
