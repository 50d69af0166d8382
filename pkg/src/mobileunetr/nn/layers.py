"""Leaf layers: convolutions, linear, normalization, activation."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .module import CostRow, Module, own_params, param


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def trunc_normal(rng: np.random.Generator, shape: tuple, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, groups: int = 1, bias: bool = True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.groups = kernel_size, stride, groups
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = param(kaiming_uniform(rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in))
        self.bias = param(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def profile(self, shape, rows, prefix=""):
        n, _, h, w = shape
        k = self.kernel_size
        ho = (h + 2 * self.padding - k) // self.stride + 1
        wo = (w + 2 * self.padding - k) // self.stride + 1
        macs = k * k * (self.in_channels // self.groups) * self.out_channels * ho * wo * n
        rows.append(CostRow(prefix.rstrip("."), "conv", own_params(self), macs))
        return (n, self.out_channels, ho, wo)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel_size: int = 2,
                 stride: int = 2, padding: int = 0, bias: bool = True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = out_channels * kernel_size * kernel_size
        self.weight = param(kaiming_uniform(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.bias = param(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.transpose_conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def profile(self, shape, rows, prefix=""):
        n, _, h, w = shape
        k = self.kernel_size
        macs = k * k * self.in_channels * self.out_channels * h * w * n
        ho = (h - 1) * self.stride - 2 * self.padding + k
        wo = (w - 1) * self.stride - 2 * self.padding + k
        rows.append(CostRow(prefix.rstrip("."), "transpose_conv", own_params(self), macs))
        return (n, self.out_channels, ho, wo)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = param(trunc_normal(rng, (out_features, in_features)))
        self.bias = param(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)

    def profile(self, shape, rows, prefix=""):
        tokens = int(np.prod(shape[:-1]))
        rows.append(CostRow(prefix.rstrip("."), "linear", own_params(self), tokens * self.in_features * self.out_features))
        return (*shape[:-1], self.out_features)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias, self.eps)

    def profile(self, shape, rows, prefix=""):
        rows.append(CostRow(prefix.rstrip("."), "layernorm", own_params(self), 0, int(np.prod(shape))))
        return shape


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return ad.batch_norm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)

    def profile(self, shape, rows, prefix=""):
        rows.append(CostRow(prefix.rstrip("."), "batchnorm", own_params(self), 0, int(np.prod(shape))))
        return shape


class SiLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ad.silu(x)

    def profile(self, shape, rows, prefix=""):
        rows.append(CostRow(prefix.rstrip("."), "act", 0, 0, int(np.prod(shape))))
        return shape


class ConvBNAct(Module):
    """Bias-free conv, batch norm, optional SiLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, groups: int = 1, act: bool = True):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride, groups=groups, bias=False)
        self.bn = BatchNorm2d(out_channels)
        self.act = SiLU() if act else None

    def forward(self, x: Tensor) -> Tensor:
        x = self.bn(self.conv(x))
        return self.act(x) if self.act is not None else x

    def profile(self, shape, rows, prefix=""):
        shape = self.conv.profile(shape, rows, prefix + "conv.")
        shape = self.bn.profile(shape, rows, prefix + "bn.")
        if self.act is not None:
            shape = self.act.profile(shape, rows, prefix + "act.")
        return shape
