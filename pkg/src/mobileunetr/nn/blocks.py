"""Convolution stem, inverted residual, transformer layer, MobileViT block, hybrid decoder block."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..config import DecoderBlockSpec, MobileViTBlockSpec, MV2BlockSpec, StemSpec
from ..errors import DecoderWiringError, DimensionError, PatchSizeError
from .layers import Conv2d, ConvBNAct, ConvTranspose2d, LayerNorm, Linear, SiLU
from .module import CostRow, Module, ModuleList


class MV2Block(Module):
    """Inverted residual: 1x1 expand, 3x3 depthwise (strided), 1x1 linear project."""

    def __init__(self, spec: MV2BlockSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        hidden = spec.in_channels * spec.expansion_ratio
        self.expand = ConvBNAct(spec.in_channels, hidden, 1, rng) if spec.expansion_ratio != 1 else None
        self.depthwise = ConvBNAct(hidden, hidden, 3, rng, stride=spec.stride, groups=hidden)
        self.project = ConvBNAct(hidden, spec.out_channels, 1, rng, act=False)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise DimensionError(f"MV2 block expects {self.spec.in_channels} channels, got {x.shape[1]}")
        y = x if self.expand is None else self.expand(x)
        y = self.project(self.depthwise(y))
        return ad.add(x, y) if self.spec.has_residual else y

    def profile(self, shape, rows, prefix=""):
        y = shape if self.expand is None else self.expand.profile(shape, rows, prefix + "expand.")
        y = self.depthwise.profile(y, rows, prefix + "depthwise.")
        y = self.project.profile(y, rows, prefix + "project.")
        if self.spec.has_residual:
            rows.append(CostRow(prefix + "residual", "add", 0, 0, int(np.prod(y))))
        return y


class Stem(Module):
    """3x3 stride-2 conv followed by the stem's MV2 stages."""

    def __init__(self, spec: StemSpec, in_channels: int, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.conv = ConvBNAct(in_channels, spec.out_channels, 3, rng, stride=2)
        self.blocks = ModuleList()
        c = spec.out_channels
        for out_c, stride in spec.stages:
            self.blocks.append(MV2Block(MV2BlockSpec(c, out_c, stride, spec.expansion_ratio), rng))
            c = out_c

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % self.spec.stride or w % self.spec.stride:
            raise DimensionError(f"stem input {h}x{w} not divisible by stem stride {self.spec.stride}")
        x = self.conv(x)
        for b in self.blocks:
            x = b(x)
        return x

    def profile(self, shape, rows, prefix=""):
        shape = self.conv.profile(shape, rows, prefix + "conv.")
        for i, b in enumerate(self.blocks):
            shape = b.profile(shape, rows, f"{prefix}blocks.{i}.")
        return shape


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise DimensionError(f"attention dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)
        self.last_weights = None

    def forward(self, x: Tensor, keep_weights: bool = False) -> Tensor:
        b, s, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = ad.reshape(self.qkv(x), (b, s, 3, h, dh))
        qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # 3, B, h, S, dh
        q, k, v = (ad.reshape(ad.narrow(qkv, 0, i, 1), (b, h, s, dh)) for i in range(3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, axis=-1)
        if keep_weights:
            self.last_weights = attn.data
        ctx = ad.matmul(attn, v)  # B, h, S, dh
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
        return self.out(ctx)

    def profile(self, shape, rows, prefix=""):
        b, s, d = shape
        self.qkv.profile(shape, rows, prefix + "qkv.")
        dh = d // self.heads
        rows.append(CostRow(prefix + "core", "attention", 0, 2 * b * self.heads * s * s * dh,
                            b * self.heads * s * s))
        return self.out.profile(shape, rows, prefix + "out.")


class TransformerLayer(Module):
    """Pre-norm multi-head self-attention and MLP, each wrapped in a residual add."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        hidden = int(round(dim * mlp_ratio))
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.act = SiLU()
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise DimensionError(f"transformer layer expects B x S x {self.dim}, got {x.shape}")
        x = ad.add(x, self.attn(self.norm1(x)))
        return ad.add(x, self.fc2(self.act(self.fc1(self.norm2(x)))))

    def profile(self, shape, rows, prefix=""):
        y = self.norm1.profile(shape, rows, prefix + "norm1.")
        self.attn.profile(y, rows, prefix + "attn.")
        y = self.norm2.profile(shape, rows, prefix + "norm2.")
        y = self.fc1.profile(y, rows, prefix + "fc1.")
        y = self.act.profile(y, rows, prefix + "act.")
        return self.fc2.profile(y, rows, prefix + "fc2.")


class MobileViTBlock(Module):
    """Local depthwise-separable conv, 1x1 projection to the transformer width,
    unfold into patches, transformer layers, fold back, project to C, then a
    3x3 conv fusing the result with the block input."""

    def __init__(self, spec: MobileViTBlockSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c, d, k = spec.channels, spec.transformer_dim, spec.kernel_size
        self.local_dw = ConvBNAct(c, c, k, rng, groups=c)
        self.local_pw = ConvBNAct(c, c, 1, rng)
        self.proj_in = Conv2d(c, d, 1, rng, bias=False)
        self.layers = ModuleList(TransformerLayer(d, spec.heads, spec.mlp_ratio, rng)
                                 for _ in range(spec.transformer_layers))
        self.norm = LayerNorm(d) if spec.transformer_layers else None
        self.proj_out = ConvBNAct(d, c, 1, rng)
        self.fusion = ConvBNAct(2 * c, c, k, rng)

    def _check(self, shape):
        n, c, h, w = shape
        if c != self.spec.channels:
            raise DimensionError(f"MobileViT block expects {self.spec.channels} channels, got {c}")
        if h % self.spec.patch_h or w % self.spec.patch_w:
            raise PatchSizeError(f"MobileViT input {h}x{w} not divisible by patch "
                                 f"{self.spec.patch_h}x{self.spec.patch_w}")

    def forward(self, x: Tensor) -> Tensor:
        self._check(x.shape)
        _, _, h, w = x.shape
        ph, pw = self.spec.patch_h, self.spec.patch_w
        y = self.proj_in(self.local_pw(self.local_dw(x)))
        seq = ad.unfold_patches(y, ph, pw)
        for layer in self.layers:
            seq = layer(seq)
        if self.norm is not None:
            seq = self.norm(seq)
        y = self.proj_out(ad.fold_patches(seq, ph, pw, h, w))
        return self.fusion(ad.concat([y, x], axis=1))

    def profile(self, shape, rows, prefix=""):
        self._check(shape)
        n, c, h, w = shape
        ph, pw = self.spec.patch_h, self.spec.patch_w
        y = self.local_dw.profile(shape, rows, prefix + "local_dw.")
        y = self.local_pw.profile(y, rows, prefix + "local_pw.")
        y = self.proj_in.profile(y, rows, prefix + "proj_in.")
        seq = (n * ph * pw, (h // ph) * (w // pw), self.spec.transformer_dim)
        for i, layer in enumerate(self.layers):
            seq = layer.profile(seq, rows, f"{prefix}layers.{i}.")
        if self.norm is not None:
            self.norm.profile(seq, rows, prefix + "norm.")
        y = self.proj_out.profile(y, rows, prefix + "proj_out.")
        return self.fusion.profile((n, 2 * c, h, w), rows, prefix + "fusion.")


class DecoderBlock(Module):
    """Transpose-conv upsampling, skip-fusion local refinement, MobileViT global refinement.

    Setting ``global_refine_enabled = False`` bypasses the last step, which
    lets tests observe the upsample + local-refine output on its own.
    """

    def __init__(self, spec: DecoderBlockSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.up = ConvTranspose2d(spec.in_channels, spec.out_channels, rng, kernel_size=2, stride=2)
        self.local = ConvBNAct(spec.out_channels + spec.skip_channels, spec.out_channels, 3, rng)
        self.refine = MobileViTBlock(spec.global_refine, rng) if spec.global_refine is not None else None
        self.global_refine_enabled = True

    def _check(self, x_shape, skip_shape):
        n, c, h, w = x_shape
        if c != self.spec.in_channels:
            raise DimensionError(f"decoder block expects {self.spec.in_channels} channels, got {c}")
        want = (n, self.spec.skip_channels, 2 * h, 2 * w)
        if tuple(skip_shape) != want:
            raise DecoderWiringError(f"skip tensor {tuple(skip_shape)} does not match expected {want}")

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        self._check(x.shape, skip.shape)
        y = self.local(ad.concat([self.up(x), skip], axis=1))
        if self.refine is not None and self.global_refine_enabled:
            y = self.refine(y)
        return y

    def profile(self, shape, rows, prefix=""):
        n, _, h, w = shape
        self._check(shape, (n, self.spec.skip_channels, 2 * h, 2 * w))
        y = self.up.profile(shape, rows, prefix + "up.")
        y = self.local.profile((n, y[1] + self.spec.skip_channels, y[2], y[3]), rows, prefix + "local.")
        if self.refine is not None:
            y = self.refine.profile(y, rows, prefix + "refine.")
        return y
