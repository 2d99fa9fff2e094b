"""Network layers: dense, 2-d convolution, relu, flatten, dropout.

Layers are thin parameter holders whose ``forward`` builds onto the gradient
tape. Dropout is the only stochastic layer; it applies in train mode when its
rate is positive and requires an explicit generator so masks are reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "base"

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def forward(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weight = np.zeros((out_features, in_features))
            bias = np.zeros(out_features)
        else:
            weight = kaiming_uniform((out_features, in_features), in_features, rng)
            b = 1.0 / math.sqrt(in_features)
            bias = rng.uniform(-b, b, size=out_features)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, train=False, rng=None):
        return T.add(T.matmul(x, T.transpose(self.weight)), self.bias)

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if rng is None:
            weight = np.zeros(shape)
            bias = np.zeros(out_channels)
        else:
            weight = kaiming_uniform(shape, fan_in, rng)
            b = 1.0 / math.sqrt(fan_in)
            bias = rng.uniform(-b, b, size=out_channels)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, train=False, rng=None):
        out = T.conv2d(x, self.weight)
        return T.add(out, T.reshape(self.bias, (1, self.out_channels, 1, 1)))

    def spec(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
        }


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        return T.relu(x)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        batch = x.shape[0]
        flat = 1
        for n in x.shape[1:]:
            flat *= n
        return T.reshape(x, (batch, flat))


class Dropout(Layer):
    """Inverted dropout: keep mask drawn as ``rng.random(shape) >= rate``,
    kept activations scaled by 1/(1-rate). Identity in eval mode or at rate 0."""

    kind = "dropout"

    def __init__(self, rate: float = 0.0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode requires an rng")
        keep = rng.random(x.shape) >= self.rate
        mask = keep / (1.0 - self.rate)
        return T.mul(x, Tensor(mask))

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


def layer_from_spec(spec: dict, rng: np.random.Generator | None = None) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["in_features"], spec["out_features"], rng=rng)
    if kind == "conv2d":
        return Conv2d(spec["in_channels"], spec["out_channels"], spec["kernel_size"], rng=rng)
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "dropout":
        return Dropout(spec.get("rate", 0.0))
    raise ValueError(f"unknown layer kind: {kind!r}")
