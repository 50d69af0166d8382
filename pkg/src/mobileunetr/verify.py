"""Finite-difference gradient checks over each block type and the whole tiny model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gradcheck
from .config import DecoderBlockSpec, MobileViTBlockSpec, MV2BlockSpec, StemSpec
from .metrics import segmentation_loss
from .model import build_model
from .nn.blocks import DecoderBlock, MobileViTBlock, MV2Block, Stem, TransformerLayer

BLOCK_TOL = 1e-3
MODEL_TOL = 1e-2


@dataclass
class GradcheckRow:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tolerance)


def _inputs(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def block_cases(seed: int = 0) -> dict:
    """name -> (function of one input tensor, input, parameters) on small shapes."""
    rng = np.random.default_rng(seed)
    stem = Stem(StemSpec(4, [[6, 2]], 2), 3, rng)
    mv2 = MV2Block(MV2BlockSpec(4, 4, 1, 2), rng)
    layer = TransformerLayer(8, 2, 2.0, rng)
    vit = MobileViTBlock(MobileViTBlockSpec(4, 8, 1, heads=2, patch_h=2, patch_w=2), rng)
    dec = DecoderBlock(DecoderBlockSpec(6, 3, 4, MobileViTBlockSpec(4, 8, 1, heads=2)), rng)
    skip = _inputs(rng, 2, 3, 8, 8)
    mask = Tensor((rng.random((2, 1, 4, 4)) < 0.5).astype(float))
    return {
        "stem": (stem, _inputs(rng, 2, 3, 8, 8), stem.parameters()),
        "mv2": (mv2, _inputs(rng, 2, 4, 6, 6), mv2.parameters()),
        "transformer_layer": (layer, _inputs(rng, 2, 5, 8), layer.parameters()),
        "mobilevit": (vit, _inputs(rng, 2, 4, 4, 4), vit.parameters()),
        "decoder": (lambda x: dec(x, skip), _inputs(rng, 2, 6, 4, 4), dec.parameters() + [skip]),
        "loss": (lambda x: segmentation_loss(x, mask), _inputs(rng, 2, 1, 4, 4), []),
    }


def check_blocks(seed: int = 0, max_points: int = 12) -> list[GradcheckRow]:
    rows = []
    for name, (fn, x, params) in block_cases(seed).items():
        err = gradcheck(fn, x, wrt=params, max_points=max_points, seed=seed)
        rows.append(GradcheckRow(name, err, BLOCK_TOL))
    return rows


def check_model(seed: int = 0, resolution: int = 32, max_points: int = 2) -> GradcheckRow:
    """Full tiny model through the training loss, input plus a sample of every parameter."""
    model = build_model("tiny", seed)
    rng = np.random.default_rng(seed + 1)
    x = _inputs(rng, 2, 3, resolution, resolution)
    mask = Tensor((rng.random((2, 1, resolution, resolution)) < 0.3).astype(float))
    err = gradcheck(lambda t: segmentation_loss(model(t, training=True), mask), x,
                    wrt=model.parameters(), max_points=max_points, seed=seed)
    return GradcheckRow("model", err, MODEL_TOL)
