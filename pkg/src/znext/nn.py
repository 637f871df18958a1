"""Parameter containers and the Conv-BN-ReLU building blocks."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype, relu


class Module:
    """Minimal named-parameter tree.

    Attributes holding a :class:`Tensor` with ``requires_grad`` are
    parameters, attributes holding a :class:`Module` (or a list of them) are
    children.  Non-learnable arrays are declared through ``_buffers``.
    """

    def __init__(self):
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_buffers", OrderedDict())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, arr in self._buffers.items():
            yield prefix + key, arr
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, list):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place."""
        for m in self.modules():
            for key, val in vars(m).items():
                if isinstance(val, Tensor) and val.requires_grad:
                    val.data = val.data.astype(dtype)
                    val.grad = None
            for key, arr in list(m._buffers.items()):
                m._buffers[key] = arr.astype(dtype)
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if own[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {own[name].shape}")
            if name in params:
                params[name].data = np.array(arr, dtype=arr.dtype)
            else:
                owner, key = self._locate_buffer(name)
                owner._buffers[key] = np.array(arr, dtype=arr.dtype)

    def _locate_buffer(self, name: str):
        parts = name.split(".")
        node = self
        for part in parts[:-1]:
            node = node[int(part)] if isinstance(node, list) else getattr(node, part)
        return node, parts[-1]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> Tensor:
    std = gain * np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin: int, cout: int, k: int = 3, stride: int = 1, padding: int | None = None,
                 groups: int = 1, bias: bool = True, gain: float = 1.0):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.groups = groups
        self.weight = kaiming(rng, (cout, cin // groups, k, k), (cin // groups) * k * k, gain)
        self.bias = zeros((cout,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    def __init__(self, c: int):
        super().__init__()
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = zeros((c,))
        dt = default_dtype()
        self._buffers["running_mean"] = np.zeros(c, dtype=dt)
        self._buffers["running_var"] = np.ones(c, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self._buffers["running_mean"],
                               self._buffers["running_var"], self.training)


class CBR(Module):
    """Conv (no bias) -> BatchNorm -> ReLU."""

    def __init__(self, rng, cin: int, cout: int, k: int = 3, stride: int = 1):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k, stride=stride, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.conv(x)))
