"""Parameter-holding module tree with structural naming and static cost profiling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..autodiff import Tensor


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    macs: int
    elementwise: int = 0


class Module:
    """Base class: attributes that are parameter Tensors, Modules, or lists of
    Modules are registered in assignment order, which fixes parameter names."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        elif isinstance(value, ModuleList):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, mod in self._modules.items():
            if isinstance(mod, ModuleList):
                for i, sub in enumerate(mod):
                    yield f"{key}.{i}", sub
            else:
                yield key, mod

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + k, v) for k, v in self._params.items()]
        for key, mod in self.children():
            out.extend(mod.named_parameters(f"{prefix}{key}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, getattr(self, k)) for k in self._buffers]
        for key, mod in self.children():
            out.extend(mod.named_buffers(f"{prefix}{key}."))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        if not rest:
            getattr(self, head)[...] = value
            return
        mod = self._modules[head]
        if isinstance(mod, ModuleList):
            idx, _, rest = rest.partition(".")
            mod = mod[int(idx)]
        mod.set_buffer(rest, value)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for _, mod in self.children():
            mod.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def profile(self, shape: tuple, rows: list, prefix: str = "") -> tuple:
        """Append cost rows for this module at input ``shape``; return output shape."""
        raise NotImplementedError(type(self).__name__)


class ModuleList(list):
    """Plain list of modules; registered by the owning Module."""


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def own_params(module: Module) -> int:
    return int(sum(p.size for p in module._params.values()))

