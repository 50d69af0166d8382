"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def check_images(X, channels: int = 3, stride: int = 1) -> np.ndarray:
    """Return ``X`` as a float32 ``N x C x H x W`` array in [0, 1].

    A single ``C x H x W`` image is promoted to a batch of one.
    """
    arr = np.asarray(X.data if hasattr(X, "data") and not isinstance(X, np.ndarray) else X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"images must be N x {channels} x H x W, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("images are empty")
    if arr.shape[1] != channels:
        raise DimensionError(f"images must have {channels} channels, got {arr.shape[1]}")
    if arr.shape[2] % stride or arr.shape[3] % stride:
        raise DimensionError(f"image size {arr.shape[2]}x{arr.shape[3]} not divisible by stride {stride}")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"images must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise ValueError("images contain NaN or infinite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"image values must lie in [0, 1], got [{arr.min()}, {arr.max()}]")
    return np.ascontiguousarray(arr)


def check_masks(y, images: np.ndarray) -> np.ndarray:
    """Return ``y`` as a float32 ``N x 1 x H x W`` {0, 1} array matching ``images``."""
    arr = np.asarray(y.data if hasattr(y, "data") and not isinstance(y, np.ndarray) else y)
    n, _, h, w = images.shape
    if arr.shape == (n, h, w):
        arr = arr[:, None]
    if arr.shape != (n, 1, h, w):
        raise DimensionError(f"masks must be {(n, 1, h, w)} to match the images, got {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("masks must be binary (0 and 1 only)")
    return arr.astype(np.float32)
