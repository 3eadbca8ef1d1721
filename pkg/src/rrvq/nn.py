"""Small layers on top of :mod:`rrvq.tensor`.

Each layer registers its weights in a shared ``params`` dict under a dotted
name, so a model's parameters can be enumerated, optimised and serialised
from one place.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, conv2d, conv_transpose2d, downsample_nearest, upsample_nearest

Params = dict[str, Tensor]


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int, gain: float = 1.0) -> Tensor:
    bound = gain / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _register(params: Params, name: str, t: Tensor) -> Tensor:
    if name in params:
        raise KeyError(f"duplicate parameter {name}")
    params[name] = t
    return t


class Conv:
    def __init__(self, params: Params, name: str, cin: int, cout: int, rng, k: int = 3, stride: int = 1,
                 gain: float = 1.0):
        self.stride = stride
        self.w = _register(params, f"{name}.w", _uniform(rng, (cout, cin, k, k), cin * k * k, gain))
        self.b = _register(params, f"{name}.b", Tensor(np.zeros(cout), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride)


class ConvT:
    """Stride-2 transposed convolution (4x4 kernel) that doubles the spatial extent."""

    def __init__(self, params: Params, name: str, cin: int, cout: int, rng, gain: float = 1.0):
        # each output pixel sees ~ cin * 4 taps
        self.w = _register(params, f"{name}.w", _uniform(rng, (cin, cout, 4, 4), cin * 4, gain))
        self.b = _register(params, f"{name}.b", Tensor(np.zeros(cout), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.w, self.b, stride=2, padding=1)


class Dense:
    def __init__(self, params: Params, name: str, nin: int, nout: int, rng, gain: float = 1.0):
        self.w = _register(params, f"{name}.w", _uniform(rng, (nin, nout), nin, gain))
        self.b = _register(params, f"{name}.b", Tensor(np.zeros(nout), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class ResBlock:
    """Two ELU-convolutions with an additive skip.

    ``resample`` of ``"down"`` or ``"up"`` halves or doubles the grid; the
    skip path then uses nearest-neighbour rescaling and the residual path a
    strided (transposed) convolution.
    """

    def __init__(self, params: Params, name: str, channels: int, rng, resample: str | None = None):
        self.resample = resample
        if resample == "up":
            self.c1 = ConvT(params, f"{name}.c1", channels, channels, rng)
        else:
            self.c1 = Conv(params, f"{name}.c1", channels, channels, rng, stride=2 if resample == "down" else 1)
        self.c2 = Conv(params, f"{name}.c2", channels, channels, rng, gain=0.1)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.c2(self.c1(x.elu()).elu())
        if self.resample == "down":
            x = downsample_nearest(x)
        elif self.resample == "up":
            x = upsample_nearest(x)
        return x + h


class DenseResBlock:
    def __init__(self, params: Params, name: str, width: int, rng):
        self.l1 = Dense(params, f"{name}.l1", width, width, rng)
        self.l2 = Dense(params, f"{name}.l2", width, width, rng, gain=0.1)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.l2(self.l1(x.elu()).elu())


class Sequential:
    def __init__(self, *layers, act_between: bool = True):
        self.layers = layers
        self.act_between = act_between

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i and self.act_between:
                x = x.elu()
            x = layer(x)
        return x


class ToGrid:
    """Dense map from a feature vector to a ``(channels, side, side)`` grid."""

    def __init__(self, params: Params, name: str, nin: int, channels: int, side: int, rng, gain: float = 1.0):
        self.channels, self.side = channels, side
        self.dense = Dense(params, name, nin, channels * side * side, rng, gain)

    def __call__(self, x: Tensor) -> Tensor:
        return self.dense(x.elu()).reshape(x.shape[0], self.channels, self.side, self.side)


class FromGrid:
    """Dense map from a flattened grid to a feature vector."""

    def __init__(self, params: Params, name: str, channels: int, side: int, nout: int, rng):
        self.dense = Dense(params, name, channels * side * side, nout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.dense(x.reshape(x.shape[0], -1))
