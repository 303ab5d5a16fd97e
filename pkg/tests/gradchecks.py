"""One finite-difference trial per kernel: returns the max relative error.

Each trial draws a random instance no larger than 2x4x8x8, runs the float32
analytic backward, and compares every gradient component against central
differences (step 1e-3) of the float64 reference forward in ``oracles``.
"""

import numpy as np

from domshift import tensor as T

import oracles as ref

STEP = 1e-3


def _conv_instance(rng, transposed):
    while True:
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 5))
        o = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2)) if k > 1 else 0
        h = int(rng.integers(2, 9))
        w = int(rng.integers(2, 9))
        spec = T.ConvSpec(c, o, k, s, p, transposed=transposed)
        ho, wo = spec.output_size(h), spec.output_size(w)
        if transposed and (ho > 8 or wo > 8):
            continue
        if ho >= 1 and wo >= 1:
            break
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = rng.standard_normal(spec.weight_shape()).astype(np.float32)
    b = rng.standard_normal(o).astype(np.float32)
    u = rng.standard_normal((n, o, ho, wo))
    return spec, x, wt, b, u


def _worst(pairs):
    return max(ref.max_rel_error(a, n) for a, n in pairs)


def conv2d(rng):
    spec, x, w, b, u = _conv_instance(rng, transposed=False)
    s, p = spec.stride, spec.padding
    grads = T.conv2d_backward(x, w, spec, u.astype(np.float32))
    num_x = ref.numeric_grad(lambda v: np.sum(ref.conv2d(v, w, b, s, p) * u), x, STEP)
    num_w = ref.numeric_grad(lambda v: np.sum(ref.conv2d(x, v, b, s, p) * u), w, STEP)
    num_b = ref.numeric_grad(lambda v: np.sum(ref.conv2d(x, w, v, s, p) * u), b, STEP)
    return _worst([(grads.d_input, num_x), (grads.d_weight, num_w), (grads.d_bias, num_b)])


def convtranspose2d(rng):
    spec, x, w, b, u = _conv_instance(rng, transposed=True)
    s, p = spec.stride, spec.padding
    grads = T.convtranspose2d_backward(x, w, spec, u.astype(np.float32))
    f = ref.conv_transpose2d
    num_x = ref.numeric_grad(lambda v: np.sum(f(v, w, b, s, p) * u), x, STEP)
    num_w = ref.numeric_grad(lambda v: np.sum(f(x, v, b, s, p) * u), w, STEP)
    num_b = ref.numeric_grad(lambda v: np.sum(f(x, w, v, s, p) * u), b, STEP)
    return _worst([(grads.d_input, num_x), (grads.d_weight, num_w), (grads.d_bias, num_b)])


def _small_shape(rng):
    return (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))


def relu(rng):
    shape = _small_shape(rng)
    # keep clear of the kink so the central difference never straddles it
    mag = rng.uniform(0.05, 2.0, shape)
    x = (mag * rng.choice([-1.0, 1.0], shape)).astype(np.float32)
    u = rng.standard_normal(shape)
    analytic = T.relu_backward(x, u.astype(np.float32))
    numeric = ref.numeric_grad(lambda v: np.sum(ref.relu(v) * u), x, STEP)
    return ref.max_rel_error(analytic, numeric)


def sigmoid(rng):
    shape = _small_shape(rng)
    x = (3 * rng.standard_normal(shape)).astype(np.float32)
    u = rng.standard_normal(shape)
    analytic = T.sigmoid_backward(x, u.astype(np.float32))
    numeric = ref.numeric_grad(lambda v: np.sum(ref.sigmoid(v) * u), x, STEP)
    return ref.max_rel_error(analytic, numeric)


def mse(rng):
    shape = _small_shape(rng)
    pred = rng.uniform(0, 1, shape).astype(np.float32)
    target = rng.uniform(0, 1, shape).astype(np.float32)
    _, analytic = T.mse_loss(pred, target)
    numeric = ref.numeric_grad(lambda v: ref.mse(v, target), pred, STEP)
    return ref.max_rel_error(analytic, numeric)


def softmax_xent(rng):
    n = int(rng.integers(1, 9))
    k = int(rng.integers(2, 9))
    logits = (2 * rng.standard_normal((n, k))).astype(np.float32)
    labels = rng.integers(0, k, n)
    _, analytic = T.softmax_cross_entropy(logits, labels)
    numeric = ref.numeric_grad(lambda v: ref.softmax_xent(v, labels), logits, STEP)
    return ref.max_rel_error(analytic, numeric)


def gap(rng):
    shape = _small_shape(rng)
    x = rng.standard_normal(shape).astype(np.float32)
    u = rng.standard_normal((shape[0], shape[1], 1, 1))
    analytic = T.global_avg_pool_backward(x.shape, u.astype(np.float32))
    numeric = ref.numeric_grad(lambda v: np.sum(ref.gap(v) * u), x, STEP)
    return ref.max_rel_error(analytic, numeric)


def dense(rng):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 9))
    k = int(rng.integers(1, 9))
    x = rng.standard_normal((n, c, 1, 1)).astype(np.float32)
    w = rng.standard_normal((k, c)).astype(np.float32)
    b = rng.standard_normal(k).astype(np.float32)
    u = rng.standard_normal((n, k, 1, 1))
    grads = T.dense_backward(x, w, u.astype(np.float32))
    num_x = ref.numeric_grad(lambda v: np.sum(ref.dense(v, w, b) * u), x, STEP)
    num_w = ref.numeric_grad(lambda v: np.sum(ref.dense(x, v, b) * u), w, STEP)
    num_b = ref.numeric_grad(lambda v: np.sum(ref.dense(x, w, v) * u), b, STEP)
    return _worst([(grads.d_input, num_x), (grads.d_weight, num_w), (grads.d_bias, num_b)])


KERNELS = {
    "conv2d": conv2d,
    "convtranspose2d": convtranspose2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "mse": mse,
    "softmax_xent": softmax_xent,
    "gap": gap,
    "dense": dense,
}


def adjoint_gap(rng):
    """Relative mismatch of <conv(x), y> vs <x, convT(y)> for one random draw."""
    while True:
        c = int(rng.integers(1, 5))
        o = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, k))
        h = int(rng.integers(k, 10))
        w = int(rng.integers(k, 10))
        spec = T.ConvSpec(c, o, k, s, p)
        ho, wo = spec.output_size(h), spec.output_size(w)
        # the adjoint only round-trips the shape when the stride tiles exactly
        if ho >= 1 and wo >= 1 and spec.adjoint().output_size(ho) == h and spec.adjoint().output_size(wo) == w:
            break
    n = int(rng.integers(1, 3))
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    y = rng.standard_normal((n, o, ho, wo)).astype(np.float32)
    wt = rng.standard_normal(spec.weight_shape()).astype(np.float32)
    lhs = float(np.sum(T.conv2d_forward(x, wt, None, spec).astype(np.float64) * y))
    rhs = float(np.sum(x.astype(np.float64) * T.convtranspose2d_forward(y, wt, None, spec.adjoint())))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)
