"""Module containers and the two parameterised layers (conv, dense)."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError


class Module:
    """Base class: attributes that are Parameters, Modules or lists of Modules
    are discovered in definition order to build hierarchical parameter names."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                value.name = name
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def trainable(self) -> dict[str, Parameter]:
        return {k: p for k, p in self.named_parameters() if p.requires_grad}

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def freeze(self) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = False
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    # drawn in float64 so 32- and 64-bit builds from one seed agree up to rounding
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, *,
                 stride: int = 1, rng: np.random.Generator, dtype=np.float32):
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"only odd kernels are supported, got {kernel_size}")
        self.stride = stride
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter(_uniform(rng, shape, in_channels * kernel_size ** 2, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, padding="same", stride=self.stride)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


def count_parameters(net: Module, depth: int = 1) -> tuple[int, dict[str, int]]:
    """Total element count plus a breakdown keyed by the first ``depth`` name parts."""
    total = 0
    breakdown: dict[str, int] = {}
    for name, p in net.named_parameters():
        total += p.size
        key = ".".join(name.split(".")[:depth])
        breakdown[key] = breakdown.get(key, 0) + p.size
    return total, breakdown


def zero_parameters(net: Module) -> Module:
    for _, p in net.named_parameters():
        p.data[...] = 0
    return net
