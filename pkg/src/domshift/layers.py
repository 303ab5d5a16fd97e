"""Parameter containers shared by the shifter and the classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class Layer:
    """One weighted layer. ``spec`` is None for a dense layer."""

    name: str
    spec: T.ConvSpec | None
    weight: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def forward(self, x):
        if self.spec is None:
            return T.dense_forward(x, self.weight, self.bias)
        if self.spec.transposed:
            return T.convtranspose2d_forward(x, self.weight, self.bias, self.spec)
        return T.conv2d_forward(x, self.weight, self.bias, self.spec)

    def backward(self, x, upstream, input_grad=True) -> T.LayerGrads:
        if self.spec is None:
            return T.dense_backward(x, self.weight, upstream)
        if self.spec.transposed:
            return T.convtranspose2d_backward(x, self.weight, self.spec, upstream, input_grad)
        return T.conv2d_backward(x, self.weight, self.spec, upstream, input_grad)

    def with_arrays(self, weight, bias) -> "Layer":
        return replace(self, weight=weight, bias=bias)


def init_layer(name, spec, rng, weight_shape=None, fan_in=None, zero=False) -> Layer:
    """Zero-mean uniform weights with std sqrt(2 / fan_in); zero biases."""
    shape = weight_shape or spec.weight_shape()
    out_features = shape[0] if spec is None else spec.out_channels
    if zero:
        w = np.zeros(shape, np.float32)
    else:
        fan_in = fan_in or spec.fan_in()
        bound = math.sqrt(3.0) * math.sqrt(2.0 / fan_in)
        w = rng.uniform(-bound, bound, shape).astype(np.float32)
    return Layer(name, spec, w, np.zeros(out_features, np.float32))


def flatten(layers) -> list:
    out = []
    for layer in layers:
        out += [layer.weight, layer.bias]
    return out


def unflatten(layers, arrays) -> tuple:
    return tuple(layer.with_arrays(arrays[2 * i], arrays[2 * i + 1]) for i, layer in enumerate(layers))
