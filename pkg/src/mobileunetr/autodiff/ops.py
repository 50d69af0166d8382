"""Differentiable operations over :class:`Tensor`.

Every op computes its forward pass with numpy and registers a closure that
maps the output gradient to input gradients. Layout is N x C x H x W for
images and B x S x D for token sequences.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import DegenerateBatchError, DimensionError, PatchSizeError
from .tensor import Tensor, as_tensor, make_result

# Deliberate backward bugs, switched on only by the gradcheck harness tests.
_faults: set = set()


@contextlib.contextmanager
def inject_fault(name: str):
    """Enable a known-wrong backward rule (``"conv2d_weight_sign"``)."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):  # make_result reports non-finite output
        out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result("div", out, (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return make_result("sigmoid", s, (x,), bw)


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)

    def bw(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return make_result("silu", x.data * s, (x,), bw)


def relu6(x: Tensor) -> Tensor:
    def bw(g):
        return (g * ((x.data > 0) & (x.data < 6)),)

    return make_result("relu6", np.clip(x.data, 0.0, 6.0), (x,), bw)


# ------------------------------------------------------------- reductions etc

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result("sum", out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return make_result("reshape", out, (x,), bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,), bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``[start, start + length)`` along ``axis``."""
    ax = axis % x.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise DimensionError(f"narrow [{start}, {start + length}) out of range for axis of size {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return make_result("narrow", np.ascontiguousarray(x.data[index]), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat along axis {axis}: shapes {[u.shape for u in tensors]} disagree")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result("matmul", np.matmul(a.data, b.data), (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (Dout, Din)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last dim {weight.shape[1]}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[0])
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result("linear", out, inputs, bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for {x.ndim}-d tensor")
    z = x.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        g = g.astype(np.float64)
        return ((s * (g - (g * s).sum(axis=axis, keepdims=True))).astype(x.dtype),)

    return make_result("softmax", s, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm over D={d} got gamma {gamma.shape}, beta {beta.shape}")
    z = x.data.astype(np.float64)
    mu = z.mean(axis=-1, keepdims=True)
    var = z.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z - mu) * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        g = g.astype(np.float64)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx.astype(x.dtype), (g * xhat).sum(axis=red).astype(gamma.dtype),
                g.sum(axis=red).astype(beta.dtype))

    return make_result("layer_norm", out, (x, gamma, beta), bw)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalization; running buffers are updated in place when training."""
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d expects N x C x H x W, got {x.shape}")
    c = x.shape[1]
    for label, arr in (("gamma", gamma.data), ("beta", beta.data),
                       ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise DimensionError(f"batch_norm2d {label} has shape {arr.shape}, expected ({c},)")
    bshape = (1, c, 1, 1)
    g_ = gamma.data.reshape(bshape)
    if not training:
        inv = 1.0 / np.sqrt(running_var.astype(np.float64) + eps)
        scale = (inv.reshape(bshape) * g_).astype(x.dtype)
        shift = (beta.data - running_mean * inv * gamma.data).reshape(bshape).astype(x.dtype)
        xhat = (x.data - running_mean.reshape(bshape)) * inv.reshape(bshape).astype(x.dtype)

        def bw_eval(g):
            return g * scale, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return make_result("batch_norm2d", x.data * scale + shift, (x, gamma, beta), bw_eval)

    n = x.shape[0] * x.shape[2] * x.shape[3]
    if n <= 1:
        raise DegenerateBatchError(
            f"batch_norm2d in training mode needs more than one value per channel, got {x.shape}")
    z = x.data.astype(np.float64)
    mu = z.mean(axis=(0, 2, 3))
    var = z.var(axis=(0, 2, 3))
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var * n / (n - 1)
    inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = ((z - mu.reshape(bshape)) * inv).astype(x.dtype)
    out = xhat * g_ + beta.data.reshape(bshape)
    inv32 = inv.astype(x.dtype)

    def bw(g):
        dxhat = g * g_
        m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
        m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
        dx = inv32 * (dxhat - m1.astype(x.dtype) - xhat * m2.astype(x.dtype))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result("batch_norm2d", out, (x, gamma, beta), bw)


# --------------------------------------------------------------- convolutions

def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    if k == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo]
        return np.ascontiguousarray(cols.transpose(0, 2, 3, 1)).reshape(n * ho * wo, c)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def _col2im(dcols: np.ndarray, shape: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, hp, wp = shape
    dxp = np.zeros(shape, dtype=dcols.dtype)
    d = dcols.reshape(n, ho, wo, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``groups == Cin == Cout`` takes a dedicated depthwise path; other group
    counts are split into independent dense convolutions.
    """
    if stride < 1:
        raise ValueError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be non-negative, got {padding}")
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cpg, k, k2 = weight.shape
    if k != k2:
        raise DimensionError(f"conv2d kernels must be square, got {k}x{k2}")
    if groups < 1 or cin % groups or cout % groups:
        raise DimensionError(f"conv2d channels {cin}->{cout} not divisible by groups={groups}")
    if cpg != cin // groups:
        raise DimensionError(f"conv2d weight expects {cpg * groups} input channels, got {cin}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"conv2d kernel {k} larger than padded input {h}x{w} (+{padding})")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape}, expected ({cout},)")
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(w, k, stride, padding)
    xp = _pad(x.data, padding)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    if groups == cin == cout and groups > 1:
        out, bw_core = _depthwise(xp, weight.data, stride, ho, wo)
    elif groups == 1:
        out, bw_core = _dense(xp, weight.data, stride, ho, wo)
    else:
        out, bw_core = _grouped(xp, weight.data, stride, ho, wo, groups)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def bw(g):
        dxp, dw = bw_core(g)
        if "conv2d_weight_sign" in _faults:
            dw = -dw
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        grads = (np.ascontiguousarray(dx), dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_result("conv2d", out, inputs, bw)


def _dense(xp, wt, stride, ho, wo):
    n = xp.shape[0]
    cout, cin, k, _ = wt.shape
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = wt.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        dw = (g2.T @ cols).reshape(wt.shape)
        dcols = g2 @ wmat
        if k == 1:
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            dxp[:, :, ::stride, ::stride][:, :, :ho, :wo] = dcols.reshape(n, ho, wo, cin).transpose(0, 3, 1, 2)
        else:
            dxp = _col2im(dcols, xp.shape, k, stride, ho, wo)
        return dxp, dw

    return out, bw


def _depthwise(xp, wt, stride, ho, wo):
    n, c = xp.shape[:2]
    k = wt.shape[-1]
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * wt[:, 0, i, j].reshape(1, c, 1, 1)

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        dw = np.zeros(wt.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                dw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                dxp[sl] += g * wt[:, 0, i, j].reshape(1, c, 1, 1)
        return dxp, dw

    return out, bw


def _grouped(xp, wt, stride, ho, wo, groups):
    cin = xp.shape[1]
    cout = wt.shape[0]
    ci, co = cin // groups, cout // groups
    parts = [_dense(np.ascontiguousarray(xp[:, gi * ci:(gi + 1) * ci]), wt[gi * co:(gi + 1) * co], stride, ho, wo)
             for gi in range(groups)]
    out = np.concatenate([p[0] for p in parts], axis=1)

    def bw(g):
        res = [p[1](np.ascontiguousarray(g[:, gi * co:(gi + 1) * co])) for gi, p in enumerate(parts)]
        return np.concatenate([r[0] for r in res], axis=1), np.concatenate([r[1] for r in res], axis=0)

    return out, bw


def transpose_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2,
                     padding: int = 0) -> Tensor:
    """Transposed convolution; weight is (Cin, Cout, K, K).

    Output size is ``(H - 1) * stride - 2 * padding + K``.
    """
    if stride < 1:
        raise ValueError(f"transpose_conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"transpose_conv2d padding must be non-negative, got {padding}")
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"transpose_conv2d expects 4-d tensors, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    if weight.shape[0] != cin:
        raise DimensionError(f"transpose_conv2d weight expects {weight.shape[0]} input channels, got {cin}")
    _, cout, k, k2 = weight.shape
    if k != k2:
        raise DimensionError(f"transpose_conv2d kernels must be square, got {k}x{k2}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"transpose_conv2d bias shape {bias.shape}, expected ({cout},)")
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"transpose_conv2d padding {padding} leaves no output for {x.shape}")
    xm = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, cin)
    wmat = weight.data.reshape(cin, cout * k * k)
    cols = (xm @ wmat).reshape(n, h, w, cout, k, k)
    if k == stride:
        full = cols.transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, hf, wf)
    else:
        full = np.zeros((n, cout, hf, wf), dtype=cols.dtype)
        for i in range(k):
            for j in range(k):
                full[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(full[:, :, padding:padding + ho, padding:padding + wo])
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        if k == stride and padding == 0:
            gcols = g.reshape(n, cout, h, k, w, k).transpose(0, 2, 4, 1, 3, 5)
        else:
            gf = np.zeros((n, cout, hf, wf), dtype=g.dtype)
            gf[:, :, padding:padding + ho, padding:padding + wo] = g
            gcols = np.empty((n, h, w, cout, k, k), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gcols[..., i, j] = gf[:, :, i:i + stride * h:stride, j:j + stride * w:stride].transpose(0, 2, 3, 1)
        gm = np.ascontiguousarray(gcols).reshape(-1, cout * k * k)
        dw = (xm.T @ gm).reshape(weight.shape)
        dx = (gm @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        grads = (np.ascontiguousarray(dx), dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_result("transpose_conv2d", out, inputs, bw)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result("upsample_nearest", out, (x,), bw)


# ------------------------------------------------------------ patch rearrange

def _unfold_np(a: np.ndarray, ph: int, pw: int) -> np.ndarray:
    n, d, h, w = a.shape
    a = a.reshape(n, d, h // ph, ph, w // pw, pw).transpose(0, 3, 5, 2, 4, 1)
    return np.ascontiguousarray(a).reshape(n * ph * pw, (h // ph) * (w // pw), d)


def _fold_np(s: np.ndarray, ph: int, pw: int, h: int, w: int) -> np.ndarray:
    b, _, d = s.shape
    n = b // (ph * pw)
    a = s.reshape(n, ph, pw, h // ph, w // pw, d).transpose(0, 5, 3, 1, 4, 2)
    return np.ascontiguousarray(a).reshape(n, d, h, w)


def unfold_patches(x: Tensor, ph: int, pw: int) -> Tensor:
    """N x D x H x W -> (N*ph*pw) x (H/ph * W/pw) x D.

    Pixel ``(n, d, h, w)`` lands at batch ``n*ph*pw + (h % ph)*pw + (w % pw)``,
    sequence position ``(h // ph)*(W/pw) + w // pw``.
    """
    if x.ndim != 4:
        raise DimensionError(f"unfold_patches expects N x D x H x W, got {x.shape}")
    _, _, h, w = x.shape
    if ph < 1 or pw < 1 or h % ph or w % pw:
        raise PatchSizeError(f"spatial size {h}x{w} not divisible by patch {ph}x{pw}")

    def bw(g):
        return (_fold_np(g, ph, pw, h, w),)

    return make_result("unfold_patches", _unfold_np(x.data, ph, pw), (x,), bw)


def fold_patches(seq: Tensor, ph: int, pw: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`unfold_patches`."""
    if seq.ndim != 3:
        raise DimensionError(f"fold_patches expects B x S x D, got {seq.shape}")
    if ph < 1 or pw < 1 or h % ph or w % pw:
        raise PatchSizeError(f"spatial size {h}x{w} not divisible by patch {ph}x{pw}")
    b, s, _ = seq.shape
    if b % (ph * pw) or s != (h // ph) * (w // pw):
        raise DimensionError(f"fold_patches: sequence shape {seq.shape} inconsistent with {h}x{w}, patch {ph}x{pw}")

    def bw(g):
        return (_unfold_np(g, ph, pw),)

    return make_result("fold_patches", _fold_np(seq.data, ph, pw, h, w), (seq,), bw)


# ---------------------------------------------------------------------- loss

def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against ``targets``."""
    if logits.shape != targets.shape:
        raise DimensionError(f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data.astype(np.float64)
    y = targets.data.astype(np.float64)
    # log(1 + exp(-|z|)) keeps large logits finite
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = z.size

    def bw(g):
        gl = (expit(z) - y) * (float(g) / count)
        return gl.astype(logits.dtype), None

    return make_result("bce_with_logits", np.asarray(per.mean()), (logits, targets), bw)
