"""Synthetic lesion images, binary PPM/PGM I/O, and the on-disk dataset layout.

Dataset directories hold ``images/NNNN.ppm``, ``masks/NNNN.pgm`` and a
``meta.json`` with ``count``, ``size`` and ``seed``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, ImageFormatError, UnsupportedFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class SampleBatch:
    images: np.ndarray  # N x 3 x H x W, values in [0, 1]
    masks: np.ndarray  # N x 1 x H x W, values in {0, 1}

    def __post_init__(self):
        if self.images.ndim != 4 or self.masks.ndim != 4:
            raise DimensionError(f"expected 4-d images and masks, got {self.images.shape}, {self.masks.shape}")
        n, _, h, w = self.images.shape
        if self.masks.shape != (n, 1, h, w):
            raise DimensionError(f"masks {self.masks.shape} do not match images {self.images.shape}")
        if not np.isin(self.masks, (0.0, 1.0)).all():
            raise ValueError("masks must be strictly binary")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, index) -> "SampleBatch":
        return SampleBatch(self.images[index], self.masks[index])


# ------------------------------------------------------------------ synthesis

def _smooth_noise(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray, terms: int, freq: tuple) -> np.ndarray:
    out = np.zeros_like(yy)
    for _ in range(terms):
        fy, fx = rng.uniform(*freq, size=2) * rng.choice([-1, 1], size=2)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    return out / terms


def _lesion_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray):
    cy, cx = rng.uniform(0.3, 0.7, size=2)
    r0 = rng.uniform(0.12, 0.34)
    aspect = rng.uniform(0.7, 1.3)
    rot = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(rot) + dy * np.sin(rot)
    v = (-dx * np.sin(rot) + dy * np.cos(rot)) * aspect
    theta = np.arctan2(v, u)
    dist = np.hypot(u, v)
    radius = np.full_like(theta, r0)
    for k in range(2, 6):
        radius += r0 * rng.uniform(0, 0.12) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return dist, radius


def _draw_hair(rng: np.random.Generator, img: np.ndarray, size: int) -> None:
    for _ in range(rng.integers(3, 9)):
        p0, p1, p2 = rng.uniform(-0.1, 1.1, size=(3, 2)) * size
        t = np.linspace(0.0, 1.0, 4 * size)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
        iy, ix = np.round(pts).astype(int).T
        keep = (iy >= 0) & (iy < size) & (ix >= 0) & (ix < size)
        shade = rng.uniform(0.15, 0.35)
        img[:, iy[keep], ix[keep]] = np.minimum(img[:, iy[keep], ix[keep]], shade)


def synth_sample(size: int, seed: int, index: int, hair_artifacts: bool = False):
    """One (image, mask) pair, a pure function of ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    yy, xx = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")

    skin = np.array([0.86, 0.67, 0.56]) + rng.uniform(-0.06, 0.06, size=3)
    bg = skin[:, None, None] * (1.0 + 0.06 * _smooth_noise(rng, yy, xx, 3, (0.3, 1.5)))

    for _ in range(50):
        dist, radius = _lesion_mask(rng, yy, xx)
        mask = dist <= radius
        if 0.02 <= mask.mean() <= 0.60:
            break
    else:  # pragma: no cover - the radius range makes this unreachable in practice
        raise RuntimeError(f"could not place a lesion for seed={seed}, index={index}")

    lesion = np.array([0.42, 0.27, 0.18]) * rng.uniform(0.7, 1.2) + rng.uniform(-0.04, 0.04, size=3)
    texture = 1.0 + 0.12 * _smooth_noise(rng, yy, xx, 4, (3.0, 8.0))
    core = np.clip(1.0 - dist / np.maximum(radius, 1e-6), 0.0, 1.0)
    fg = lesion[:, None, None] * texture * (1.0 - 0.25 * core)
    soft = np.clip((radius - dist) * size / 1.5 + 0.5, 0.0, 1.0)
    soft = np.where(mask, np.maximum(soft, 0.5), np.minimum(soft, 0.49))
    img = bg * (1.0 - soft) + fg * soft
    if hair_artifacts:
        _draw_hair(rng, img, size)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img.astype(np.float32), mask[None].astype(np.float32)


def gen_synthetic(count: int, size: int, seed: int, hair_artifacts: bool = False) -> SampleBatch:
    """Deterministic batch of skin-like images with one irregular lesion each."""
    pairs = [synth_sample(size, seed, i, hair_artifacts) for i in range(count)]
    images = np.stack([p[0] for p in pairs]) if pairs else np.zeros((0, 3, size, size), np.float32)
    masks = np.stack([p[1] for p in pairs]) if pairs else np.zeros((0, 1, size, size), np.float32)
    return SampleBatch(images, masks)


# ----------------------------------------------------------------------- PNM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pnm(path: PathLike, magic: bytes) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] != magic:
        raise ImageFormatError(f"{path}: expected {magic.decode()} magic, found {raw[:2]!r}")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise ImageFormatError(f"{path}: malformed header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid size {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported, only 8-bit (255) files")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = raw[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated payload, {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).transpose(2, 0, 1)


def _write_pnm(path: PathLike, magic: bytes, arr: np.ndarray) -> None:
    c, h, w = arr.shape
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(arr.transpose(1, 2, 0)).tobytes())


def load_image(path: PathLike) -> Tensor:
    """Binary P6 file as a 3 x H x W tensor scaled to [0, 1]."""
    return Tensor(_read_pnm(path, b"P6").astype(np.float32) / 255.0)


def load_mask(path: PathLike) -> Tensor:
    """Binary P5 file as a 1 x H x W {0, 1} tensor, thresholded at 128."""
    return Tensor((_read_pnm(path, b"P5") >= 128).astype(np.float32))


def save_image(img, path: PathLike) -> None:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"save_image expects 3 x H x W, got {arr.shape}")
    _write_pnm(path, b"P6", np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8))


def save_mask(mask, path: PathLike) -> None:
    """Write a binary mask as P5 with values {0, 255}."""
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise DimensionError(f"save_mask expects 1 x H x W, got {arr.shape}")
    _write_pnm(path, b"P5", np.where(arr >= 0.5, 255, 0).astype(np.uint8))


# ------------------------------------------------------------ dataset layout

def write_dataset(batch: SampleBatch, out_dir: PathLike, meta: dict) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(len(batch)):
        save_image(batch.images[i], out / "images" / f"{i:04d}.ppm")
        save_mask(batch.masks[i], out / "masks" / f"{i:04d}.pgm")
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def generate_dataset(out_dir: PathLike, count: int, size: int, seed: int, hair_artifacts: bool = False,
                     model_stride: int = 32) -> Path:
    meta = {"count": count, "size": size, "seed": seed, "hair_artifacts": hair_artifacts}
    if size % model_stride:
        msg = f"image size {size} is not a multiple of {model_stride}, which the model needs"
        logger.warning(msg)
        meta["warning"] = msg
    return write_dataset(gen_synthetic(count, size, seed, hair_artifacts), out_dir, meta)


def read_dataset(root: PathLike) -> SampleBatch:
    root = Path(root)
    names = sorted(p.stem for p in (root / "images").glob("*.ppm"))
    if not names:
        raise FileNotFoundError(f"no images found under {root / 'images'}")
    images = np.stack([load_image(root / "images" / f"{n}.ppm").data for n in names])
    masks = np.stack([load_mask(root / "masks" / f"{n}.pgm").data for n in names])
    return SampleBatch(images, masks)
