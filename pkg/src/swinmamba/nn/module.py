"""Parameter containers with ordered, dotted names."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Mapping, Tuple

import numpy as np

from . import swmt
from .rng import Rng
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=DEFAULT_DTYPE):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)


class Module:
    """Holds parameters and submodules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{key}.{i}"] = v
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = OrderedDict(self.named_parameters())
        missing = [n for n in own if n not in state]
        extra = [n for n in state if n not in own]
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != parameter shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def save(self, path) -> None:
        swmt.save_container(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(swmt.load_container(path))

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng: Rng, fan_in: int, shape) -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, shape))


def zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape))


def ones(shape) -> Parameter:
    return Parameter(np.ones(shape))


class Linear(Module):
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = uniform_fan_in(rng.child(0), d_in, (d_in, d_out))
        self.bias = uniform_fan_in(rng.child(1), d_in, (d_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        from .ops import linear
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = ones((dim,))
        self.bias = zeros((dim,))
        self.eps = eps

    def forward(self, x: Tensor, axis: int = -1) -> Tensor:
        from .ops import layer_norm
        return layer_norm(x, self.weight, self.bias, self.eps, axis=axis)
