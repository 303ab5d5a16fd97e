"""Numeric kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 laid out as
(N, C, H, W). Every kernel here is a pure function. Convolutions are
cross-correlations (no kernel flip) lowered to a single GEMM through an
im2col/col2im pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError

DTYPE = np.float32

# Largest float32 strictly below 1; keeps sigmoid outputs inside the open interval.
_ONE_MINUS = np.float32(1.0) - np.float32(2.0**-24)
_TINY = np.finfo(np.float32).tiny


def as_tensor(x, name="input"):
    """Return ``x`` as a contiguous 4-D float32 array, validating rank."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {arr.shape}", dim="rank")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ShapeError(f"kernel and stride must be >= 1, got {self.kernel}, {self.stride}", dim="kernel")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}", dim="padding")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be >= 1", dim="channels")

    def output_size(self, size: int) -> int:
        if self.transposed:
            return (size - 1) * self.stride - 2 * self.padding + self.kernel
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel
        if self.transposed:
            return (self.in_channels, self.out_channels, k, k)
        return (self.out_channels, self.in_channels, k, k)

    def fan_in(self) -> int:
        """Number of input values feeding one output value."""
        if self.transposed:
            taps = -(-self.kernel // self.stride)
            return self.in_channels * taps * taps
        return self.in_channels * self.kernel * self.kernel

    def adjoint(self) -> "ConvSpec":
        """ConvSpec of the adjoint map (conv <-> transposed conv), same weight array."""
        return ConvSpec(
            in_channels=self.out_channels,
            out_channels=self.in_channels,
            kernel=self.kernel,
            stride=self.stride,
            padding=self.padding,
            transposed=not self.transposed,
        )


class LayerGrads(NamedTuple):
    d_input: np.ndarray
    d_weight: np.ndarray
    d_bias: np.ndarray


# ---------------------------------------------------------------------------
# im2col / col2im

def _im2col(x, k, s, p, ho, wo):
    n, c, h, w = x.shape
    if k == s and p == 0 and h == k * ho and w == k * wo:
        # non-overlapping taps: pure relayout
        cols = x.reshape(n, c, ho, k, wo, k).transpose(1, 3, 5, 0, 2, 4)
        return cols.reshape(c * k * k, n * ho * wo)
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = x[:, :, i:i + s * ho:s, j:j + s * wo:s].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(cols, shape, k, s, p, ho, wo):
    n, c, h, w = shape
    if k == s and p == 0 and h == k * ho and w == k * wo:
        cols = cols.reshape(c, k, k, n, ho, wo).transpose(3, 0, 4, 1, 5, 2)
        return np.ascontiguousarray(cols).reshape(n, c, h, w)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, n, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, i, j].transpose(1, 0, 2, 3)
    if p:
        out = out[:, :, p:p + h, p:p + w]
    return np.ascontiguousarray(out)


def _check_conv(x, weight, bias, spec, transposed):
    if spec.transposed != transposed:
        kind = "transposed" if transposed else "regular"
        raise ShapeError(f"spec.transposed must be {transposed} for a {kind} convolution", dim="transposed")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_channels}", dim="channels")
    if tuple(weight.shape) != spec.weight_shape():
        raise ShapeError(f"weight shape {tuple(weight.shape)} != expected {spec.weight_shape()}", dim="weight")
    if bias is not None and tuple(np.shape(bias)) != (spec.out_channels,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({spec.out_channels},)", dim="bias")
    ho, wo = spec.output_size(x.shape[2]), spec.output_size(x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} gives empty output {ho}x{wo}", dim="height" if ho < 1 else "width")
    return ho, wo


def _check_upstream(upstream, expected):
    if tuple(upstream.shape) != tuple(expected):
        raise ShapeError(f"upstream gradient shape {tuple(upstream.shape)} != output shape {tuple(expected)}",
                         dim="upstream")


# ---------------------------------------------------------------------------
# convolution

def conv2d_forward(x, weight, bias, spec: ConvSpec):
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    ho, wo = _check_conv(x, weight, bias, spec, transposed=False)
    n = x.shape[0]
    cols = _im2col(x, spec.kernel, spec.stride, spec.padding, ho, wo)
    out = weight.reshape(spec.out_channels, -1) @ cols
    out = out.reshape(spec.out_channels, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE).reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out, dtype=DTYPE)


def conv2d_backward(x, weight, spec: ConvSpec, upstream, input_grad=True) -> LayerGrads:
    """Gradients of conv2d_forward; ``input_grad=False`` skips d_input (returned as None)."""
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    ho, wo = _check_conv(x, weight, None, spec, transposed=False)
    n = x.shape[0]
    g = as_tensor(upstream, "upstream")
    _check_upstream(g, (n, spec.out_channels, ho, wo))
    k, s, p = spec.kernel, spec.stride, spec.padding

    g2 = g.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
    cols = _im2col(x, k, s, p, ho, wo)
    d_weight = (g2 @ cols.T).reshape(weight.shape)
    d_input = None
    if input_grad:
        d_cols = weight.reshape(spec.out_channels, -1).T @ g2
        d_input = _col2im(d_cols, x.shape, k, s, p, ho, wo)
    d_bias = g.sum(axis=(0, 2, 3), dtype=DTYPE)
    return LayerGrads(d_input, d_weight.astype(DTYPE, copy=False), d_bias)


def convtranspose2d_forward(x, weight, bias, spec: ConvSpec):
    """Transposed (fractionally strided) convolution; weight is [in_ch, out_ch, k, k]."""
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    ho, wo = _check_conv(x, weight, bias, spec, transposed=True)
    n, _, h, w = x.shape
    k, s, p = spec.kernel, spec.stride, spec.padding
    x2 = x.transpose(1, 0, 2, 3).reshape(spec.in_channels, -1)
    cols = weight.reshape(spec.in_channels, -1).T @ x2
    out = _col2im(cols, (n, spec.out_channels, ho, wo), k, s, p, h, w)
    if bias is not None:
        out += np.asarray(bias, dtype=DTYPE).reshape(1, -1, 1, 1)
    return out


def convtranspose2d_backward(x, weight, spec: ConvSpec, upstream, input_grad=True) -> LayerGrads:
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    ho, wo = _check_conv(x, weight, None, spec, transposed=True)
    n, _, h, w = x.shape
    g = as_tensor(upstream, "upstream")
    _check_upstream(g, (n, spec.out_channels, ho, wo))
    k, s, p = spec.kernel, spec.stride, spec.padding

    # The transposed conv is the adjoint of a strided conv, so its input
    # gradient is that conv applied to the upstream gradient.
    cols = _im2col(g, k, s, p, h, w)
    x2 = x.transpose(1, 0, 2, 3).reshape(spec.in_channels, -1)
    d_weight = (x2 @ cols.T).reshape(weight.shape)
    d_input = None
    if input_grad:
        d_input = (weight.reshape(spec.in_channels, -1) @ cols).reshape(spec.in_channels, n, h, w)
        d_input = np.ascontiguousarray(d_input.transpose(1, 0, 2, 3))
    d_bias = g.sum(axis=(0, 2, 3), dtype=DTYPE)
    return LayerGrads(d_input, d_weight.astype(DTYPE, copy=False), d_bias)


# ---------------------------------------------------------------------------
# activations

def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), DTYPE(0))


def relu_backward(x, upstream):
    x = np.asarray(x, dtype=DTYPE)
    return np.where(x > 0, np.asarray(upstream, dtype=DTYPE), DTYPE(0))


def sigmoid(x):
    """Overflow-free logistic function, clipped to stay strictly inside (0, 1)."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)
    return np.clip(out, _TINY, _ONE_MINUS)


def sigmoid_backward(x, upstream):
    s = sigmoid(x)
    return (np.asarray(upstream, dtype=DTYPE) * s * (1 - s)).astype(DTYPE)


# ---------------------------------------------------------------------------
# losses

def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}", dim="shape")
    diff = pred - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(DTYPE)


def softmax(logits):
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    ``logits`` may be (N, K) or (N, K, 1, 1); the gradient has the same shape.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    shape = logits.shape
    z = logits.reshape(shape[0], -1)
    n, k = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)", dim="labels")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ShapeError(f"label {bad} out of range [0, {k})", dim="labels")
    labels = labels.astype(np.intp)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_norm
    loss = float(-np.mean(log_p, dtype=np.float64))
    grad = np.exp(shifted - log_norm[:, None])
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.reshape(shape).astype(DTYPE)


# ---------------------------------------------------------------------------
# pooling and dense head

def global_avg_pool(x):
    x = as_tensor(x)
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("spatial extent must be >= 1", dim="height")
    return x.mean(axis=(2, 3), keepdims=True, dtype=DTYPE)


def global_avg_pool_backward(x_shape, upstream):
    n, c, h, w = x_shape
    g = np.asarray(upstream, dtype=DTYPE).reshape(n, c, 1, 1)
    return np.broadcast_to(g / DTYPE(h * w), (n, c, h, w)).copy()


def _check_dense(x, weight, bias):
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"dense input must be (N, C, 1, 1), got {x.shape}", dim="spatial")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"weight shape {weight.shape} incompatible with {x.shape[1]} input features", dim="features")
    if bias is not None and np.shape(bias) != (weight.shape[0],):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({weight.shape[0]},)", dim="bias")


def dense_forward(x, weight, bias):
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    _check_dense(x, weight, bias)
    out = x.reshape(x.shape[0], -1) @ weight.T
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE)
    return out.reshape(x.shape[0], -1, 1, 1).astype(DTYPE, copy=False)


def dense_backward(x, weight, upstream) -> LayerGrads:
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=DTYPE)
    _check_dense(x, weight, None)
    n = x.shape[0]
    g = np.asarray(upstream, dtype=DTYPE).reshape(n, weight.shape[0])
    x2 = x.reshape(n, -1)
    return LayerGrads(
        d_input=(g @ weight).reshape(x.shape),
        d_weight=g.T @ x2,
        d_bias=g.sum(axis=0),
    )
