"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, precision


def _scalarize(out: Tensor, proj: Optional[np.ndarray]):
    from . import ops
    if out.size == 1:
        return ops.reshape(out, ()), None
    if proj is None:
        proj = np.random.default_rng(1234).standard_normal(out.shape)
    return ops.sum(ops.mul(out, Tensor(proj))), proj


def gradcheck(f: Callable[..., Tensor], x: Tensor, h: float = 1e-3, *,
              wrt: Sequence[Tensor] = (), max_points: Optional[int] = None,
              seed: int = 0, dtype=np.float64) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f(x)`` may return any tensor; non-scalar outputs are contracted with
    a fixed random projection so every output component contributes. The
    check covers ``x`` and each tensor in ``wrt`` (typically parameters).
    With ``max_points`` only that many randomly chosen components per
    tensor are perturbed.

    Relative error per component is
    ``|a - n| / max(1e-8, |a| + |n|)``. All tensors are evaluated at
    ``dtype`` precision for the duration of the check and restored after.
    """
    targets = [x, *wrt]
    saved = [(t.data, t.requires_grad, t.grad) for t in targets]
    rng = np.random.default_rng(seed)
    try:
        with precision(dtype):
            for t in targets:
                t.data = t.data.astype(dtype)
                t.requires_grad = True
                t.grad = None
            with Tape() as tape:
                loss, proj = _scalarize(f(x), None)
            backward(loss, tape)
            analytic = [t.grad.copy() for t in targets]

            def value() -> float:
                out = f(x)
                return float(_scalarize(out, proj)[0].data)

            worst = 0.0
            for t, a in zip(targets, analytic):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_points is not None and flat.size > max_points:
                    idx = rng.choice(flat.size, size=max_points, replace=False)
                a_flat = a.reshape(-1)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = value()
                    flat[i] = orig - h
                    fm = value()
                    flat[i] = orig
                    num = (fp - fm) / (2.0 * h)
                    err = abs(a_flat[i] - num) / max(1e-8, abs(a_flat[i]) + abs(num))
                    worst = max(worst, float(err))
            return worst
    finally:
        for t, (data, rg, grad) in zip(targets, saved):
            t.data, t.requires_grad, t.grad = data, rg, grad
