"""Minimal dense-tensor engine with tape-based reverse-mode differentiation."""

from .gradcheck import gradcheck
from .ops import (
    add, batch_norm2d, bce_with_logits, concat, conv2d, div, fold_patches, inject_fault,
    layer_norm, linear, matmul, mean, mul, narrow, relu6, reshape, sigmoid, silu, softmax, sub, sum,
    transpose, transpose_conv2d, unfold_patches, upsample_nearest,
)
from .tensor import Tape, Tensor, backward, get_default_dtype, no_grad, precision

__all__ = [
    "Tape", "Tensor", "backward", "gradcheck", "get_default_dtype", "no_grad", "precision",
    "add", "batch_norm2d", "bce_with_logits", "concat", "conv2d", "div", "fold_patches",
    "inject_fault", "layer_norm", "linear", "matmul", "mean", "mul", "narrow", "relu6", "reshape",
    "sigmoid", "silu", "softmax", "sub", "sum", "transpose", "transpose_conv2d",
    "unfold_patches", "upsample_nearest",
]
