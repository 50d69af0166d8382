"""Layers and blocks built on the autodiff engine."""

from .blocks import DecoderBlock, MobileViTBlock, MultiHeadSelfAttention, MV2Block, Stem, TransformerLayer
from .layers import BatchNorm2d, Conv2d, ConvBNAct, ConvTranspose2d, LayerNorm, Linear, SiLU
from .module import CostRow, Module, ModuleList

__all__ = ["BatchNorm2d", "Conv2d", "ConvBNAct", "ConvTranspose2d", "CostRow", "DecoderBlock", "LayerNorm",
           "Linear", "MV2Block", "MobileViTBlock", "Module", "ModuleList", "MultiHeadSelfAttention", "SiLU",
           "Stem", "TransformerLayer"]
