"""scikit-learn style wrapper around model construction, training and inference."""

from __future__ import annotations

import tempfile
from typing import Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import no_grad
from .config import load_config
from .data import SampleBatch
from .metrics import binarize, compute_metrics
from .model import build_model
from .optim import ScheduleSpec
from .trainer import train
from .validation import check_images, check_masks


class MobileUNETRSegmenter(BaseEstimator):
    """Binary lesion segmenter.

    ``X`` holds images shaped ``N x 3 x H x W`` with values in [0, 1];
    ``y`` holds masks shaped ``N x 1 x H x W`` (or ``N x H x W``) in {0, 1}.
    ``score`` returns the pixel-pooled Dice coefficient.
    """

    def __init__(self, config="tiny", epochs: Optional[int] = None, batch_size: int = 8, base_lr: float = 4e-4,
                 warmup_epochs: int = 40, total_epochs: int = 440, min_lr: float = 0.0,
                 weight_decay: float = 0.01, val_fraction: float = 0.2, threshold: float = 0.5,
                 seed: int = 0, out_dir: Optional[str] = None, checkpoint_every: Optional[int] = None):
        self.config = config
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.total_epochs = total_epochs
        self.min_lr = min_lr
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.seed = seed
        self.out_dir = out_dir
        self.checkpoint_every = checkpoint_every

    def fit(self, X, y) -> "MobileUNETRSegmenter":
        cfg = load_config(self.config)
        images = check_images(X, cfg.in_channels, cfg.input_multiple)
        masks = check_masks(y, images)
        spec = ScheduleSpec(self.base_lr, self.warmup_epochs, self.total_epochs, self.min_lr)
        model = build_model(cfg, self.seed)
        kwargs = dict(spec=spec, batch_size=self.batch_size, seed=self.seed, epochs=self.epochs,
                      val_fraction=self.val_fraction, checkpoint_every=self.checkpoint_every,
                      weight_decay=self.weight_decay)
        if self.out_dir is None:
            with tempfile.TemporaryDirectory() as tmp:
                result = train(model, SampleBatch(images, masks), out_dir=tmp, **kwargs)
        else:
            result = train(model, SampleBatch(images, masks), out_dir=self.out_dir, **kwargs)
        self.model_ = model
        self.config_ = cfg
        self.history_ = result.history
        return self

    def decision_function(self, X) -> np.ndarray:
        """Mask logits, ``N x 1 x H x W``."""
        check_is_fitted(self, "model_")
        images = check_images(X, self.config_.in_channels, self.config_.input_multiple)
        self.model_.eval()
        with no_grad():
            return np.concatenate([self.model_(images[i:i + self.batch_size]).data
                                   for i in range(0, len(images), self.batch_size)])

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, y) -> float:
        pred = self.predict(X)
        return compute_metrics(pred, check_masks(y, pred)).Dice
