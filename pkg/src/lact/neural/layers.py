"""Minimal layer containers on top of :mod:`lact.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Module:
    """Collects parameters from Tensor attributes and child modules, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def name_parameters(self) -> None:
        """Label every parameter with its dotted path (used in error messages)."""
        for name, p in self.named_parameters():
            p.name = name

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, padding=0, stride=1, groups: int = 1):
        fan_in = (c_in // groups) * kernel * kernel
        self.weight = uniform_init(rng, (c_out, c_in // groups, kernel, kernel), fan_in, "weight")
        self.bias = uniform_init(rng, (c_out,), fan_in, "bias")
        self.padding = padding
        self.stride = stride
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.padding, self.stride, self.groups)


class Dense(Module):
    def __init__(self, rng, n_in: int, n_out: int):
        self.weight = uniform_init(rng, (n_in, n_out), n_in, "weight")
        self.bias = uniform_init(rng, (n_out,), n_in, "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class ChannelNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.weight = Tensor(np.ones(channels), requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(channels), requires_grad=True, name="bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm_channels(x, self.weight, self.bias, self.eps)


class ConvNeXtBlock(Module):
    """Depthwise conv, channel norm, pointwise expansion, GELU, projection, residual."""

    def __init__(self, rng, channels: int, kernel: int = 7, expansion: int = 4):
        self.dwconv = Conv2d(rng, channels, channels, kernel, padding=kernel // 2, groups=channels)
        self.norm = ChannelNorm(channels)
        self.pw1 = Conv2d(rng, channels, expansion * channels, 1)
        self.pw2 = Conv2d(rng, expansion * channels, channels, 1)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.pw2(T.gelu(self.pw1(self.norm(self.dwconv(x)))))
        return x + h
