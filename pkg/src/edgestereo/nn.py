"""Parameterised layers built on the operator set."""
from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Module, Node


class Conv2d(Module):
    """Convolution with fan-in-scaled uniform weights and zero bias."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int | None = None, dilation: int = 1):
        self.stride = stride
        self.dilation = dilation
        self.pad = dilation * (kernel - 1) // 2 if pad is None else pad
        bound = np.sqrt(6.0 / (c_in * kernel * kernel))
        self.param("weight", rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel)))
        self.param("bias", np.zeros(c_out))

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Node:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad,
                          dilation=self.dilation)


class ConvReLU(Conv2d):
    def __call__(self, x) -> Node:
        return ops.relu(super().__call__(x))


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def __call__(self, x) -> Node:
        for layer in self.layers:
            x = layer(x)
        return x
