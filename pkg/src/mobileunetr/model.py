"""Full encoder-decoder assembly."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import EncoderStageSpec, HeadSpec, ModelConfig, load_config
from .errors import DimensionError
from .nn.blocks import DecoderBlock, MobileViTBlock, MV2Block, Stem
from .nn.layers import Conv2d, ConvTranspose2d, BatchNorm2d, SiLU
from .nn.module import Module, ModuleList


class EncoderStage(Module):
    def __init__(self, spec: EncoderStageSpec, rng: np.random.Generator):
        super().__init__()
        self.mv2 = ModuleList(MV2Block(b, rng) for b in spec.mv2)
        self.vit = MobileViTBlock(spec.mobilevit, rng) if spec.mobilevit is not None else None

    def forward(self, x: Tensor) -> Tensor:
        for b in self.mv2:
            x = b(x)
        return self.vit(x) if self.vit is not None else x

    def profile(self, shape, rows, prefix=""):
        for i, b in enumerate(self.mv2):
            shape = b.profile(shape, rows, f"{prefix}mv2.{i}.")
        if self.vit is not None:
            shape = self.vit.profile(shape, rows, prefix + "vit.")
        return shape


class Head(Module):
    """Transpose-conv back to input resolution, then a 1x1 conv to mask logits."""

    def __init__(self, spec: HeadSpec, out_channels: int, rng: np.random.Generator):
        super().__init__()
        f = spec.upsample
        self.up = ConvTranspose2d(spec.in_channels, spec.hidden_channels, rng, kernel_size=f, stride=f)
        self.bn = BatchNorm2d(spec.hidden_channels)
        self.act = SiLU()
        self.classifier = Conv2d(spec.hidden_channels, out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(self.act(self.bn(self.up(x))))

    def profile(self, shape, rows, prefix=""):
        shape = self.up.profile(shape, rows, prefix + "up.")
        shape = self.bn.profile(shape, rows, prefix + "bn.")
        shape = self.act.profile(shape, rows, prefix + "act.")
        return self.classifier.profile(shape, rows, prefix + "classifier.")


class MobileUNETR(Module):
    """Hierarchical hybrid encoder-decoder producing per-pixel mask logits.

    Skip wiring: the stem output and each encoder stage output feed the
    mirror decoder stage, deepest first.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.stem = Stem(config.stem, config.in_channels, rng)
        self.encoder = ModuleList(EncoderStage(s, rng) for s in config.encoder_stages)
        self.bottleneck = EncoderStage(config.bottleneck, rng)
        self.decoder = ModuleList(DecoderBlock(d, rng) for d in config.decoder_stages)
        self.head = Head(config.head, config.out_channels, rng)

    @property
    def wiring(self) -> list[tuple[str, str]]:
        sources = ["stem"] + [f"encoder.{i}" for i in range(len(self.encoder))]
        return [(src, f"decoder.{len(sources) - 1 - i}") for i, src in enumerate(sources)]

    def _check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != self.config.in_channels:
            raise DimensionError(f"expected N x {self.config.in_channels} x H x W input, got {tuple(shape)}")
        s = self.config.input_multiple
        if shape[2] % s or shape[3] % s:
            raise DimensionError(f"input {shape[2]}x{shape[3]} must be a multiple of {s} "
                                 f"(total stride {self.config.total_stride}, raised to fit patch grids)")

    def forward(self, x: Union[Tensor, np.ndarray], training: Optional[bool] = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_input(x.shape)
        if training is not None and training != self.training:
            self.train(training)
        skips = [self.stem(x)]
        for stage in self.encoder:
            skips.append(stage(skips[-1]))
        y = self.bottleneck(skips[-1])
        for block, skip in zip(self.decoder, reversed(skips)):
            y = block(y, skip)
        return self.head(y)

    def profile(self, shape, rows, prefix=""):
        self._check_input(shape)
        skips = [self.stem.profile(shape, rows, prefix + "stem.")]
        for i, stage in enumerate(self.encoder):
            skips.append(stage.profile(skips[-1], rows, f"{prefix}encoder.{i}."))
        y = self.bottleneck.profile(skips[-1], rows, prefix + "bottleneck.")
        for i, block in enumerate(self.decoder):
            y = block.profile(y, rows, f"{prefix}decoder.{i}.")
        return self.head.profile(y, rows, prefix + "head.")

    def predict_proba(self, x) -> np.ndarray:
        with ad.no_grad():
            logits = self.forward(x, training=False)
        return ad.sigmoid(logits).data


def build_model(config, seed: int = 0) -> MobileUNETR:
    """Validate ``config`` and construct a model with seeded initialization."""
    config = load_config(config)
    return MobileUNETR(config, np.random.default_rng(seed))


def forward(model: MobileUNETR, x, training: bool = False) -> Tensor:
    return model.forward(x, training=training)


def named_parameters(model: Module) -> list[tuple[str, Tensor]]:
    return model.named_parameters()
