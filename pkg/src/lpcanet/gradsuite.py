"""Finite-difference gradient checks for every differentiable op.

Each entry builds a small random f64 instance, runs the central-difference
checker against the analytic backward pass, and reports the max relative
error.  Inputs are kept away from non-smooth points (ReLU kinks, pooling
ties) so the comparison is well conditioned.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    DepthwiseConv2d,
    Linear,
    Pool2d,
    pixel_shuffle,
    upsample_bilinear,
    upsample_nearest,
)
from .tensor import Tensor, gradcheck

__all__ = ["run_gradcheck_suite", "GRADCHECK_OPS"]


def _rand(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape).astype(np.float64))


def _rand_away_from_zero(rng, shape, margin=1e-2):
    x = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x.astype(np.float64))


def _signed_weights(rng, shape):
    # bounded away from zero so no gradient coordinate is dominated by noise
    return Tensor(rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape))


def _check_add(rng):
    a, b = _rand(rng, (2, 3, 4, 4)), _rand(rng, (2, 3, 4, 4))
    w = _signed_weights(rng, (2, 3, 4, 4))
    return gradcheck(lambda x, y: T.sum_all(T.mul(T.add(x, y), w)), [a, b])


def _check_add_bias(rng):
    a, b = _rand(rng, (2, 3, 4, 4)), _rand(rng, (1, 3, 1, 1))
    w = _signed_weights(rng, (2, 3, 4, 4))
    return gradcheck(lambda x, y: T.sum_all(T.mul(T.add(x, y), w)), [a, b])


def _check_mul(rng):
    a, b = _rand(rng, (2, 2, 3, 3)), _rand(rng, (2, 2, 3, 3))
    return gradcheck(lambda x, y: T.sum_all(T.mul(x, y)), [a, b])


def _check_scale(rng):
    a = _rand(rng, (2, 2, 3, 3))
    w = Tensor(rng.uniform(-1, 1, a.shape))
    return gradcheck(lambda x: T.sum_all(T.mul(T.scale(x, -2.7), w)), [a])


def _check_matmul(rng):
    a, b = _rand(rng, (2, 3, 4)), _rand(rng, (2, 4, 5))
    w = Tensor(rng.uniform(-1, 1, (2, 3, 5)))
    return gradcheck(lambda x, y: T.sum_all(T.mul(T.matmul_batched(x, y), w)), [a, b])


def _check_softmax(rng):
    x = _rand(rng, (3, 7))
    w = Tensor(rng.uniform(-1, 1, x.shape))
    return gradcheck(lambda t: T.sum_all(T.mul(T.softmax(t), w)), [x])


def _check_relu(rng):
    x = _rand_away_from_zero(rng, (2, 3, 4, 4))
    return gradcheck(lambda t: T.sum_all(T.relu(t)), [x], eps=1e-6)


def _check_sigmoid(rng):
    x = _rand(rng, (2, 2, 3, 3))
    w = Tensor(rng.uniform(-1, 1, x.shape))
    return gradcheck(lambda t: T.sum_all(T.mul(T.sigmoid(t), w)), [x])


def _check_log(rng):
    x = _rand(rng, (2, 2, 3, 3), low=0.2, high=1.5)
    return gradcheck(lambda t: T.sum_all(T.log(t)), [x])


def _check_concat(rng):
    a, b = _rand(rng, (1, 2, 3, 3)), _rand(rng, (1, 3, 3, 3))
    w = Tensor(rng.uniform(-1, 1, (1, 5, 3, 3)))
    return gradcheck(lambda x, y: T.sum_all(T.mul(T.concat_channels(x, y), w)), [a, b])


def _check_reshape_transpose(rng):
    x = _rand(rng, (2, 3, 4, 4))
    w = Tensor(rng.uniform(-1, 1, (2, 4, 4, 3)))
    return gradcheck(
        lambda t: T.sum_all(T.mul(T.transpose(T.reshape(t, (2, 3, 4, 4)), (0, 2, 3, 1)), w)), [x]
    )


def _layer_gradcheck(rng, layer, x, weights):
    ws = _signed_weights(rng, layer(x).shape)

    def f(*_tensors):
        return T.sum_all(T.mul(layer(x), ws))

    # the layer maps are smooth (mostly multilinear), so a larger step keeps
    # truncation negligible while cutting cancellation noise by an order
    return gradcheck(f, [x, *weights], eps=1e-4)


def _check_conv2d(rng):
    layer = Conv2d(3, 4, (4, 4), stride=2, padding=(1, 1), dtype=np.float64)
    layer.init(rng)
    x = _rand(rng, (2, 3, 8, 8))
    return _layer_gradcheck(rng, layer, x, [layer.weight, layer.bias])


def _check_conv2d_1x3(rng):
    layer = Conv2d(2, 3, (1, 3), dtype=np.float64)
    layer.init(rng)
    x = _rand(rng, (1, 2, 5, 5))
    return _layer_gradcheck(rng, layer, x, [layer.weight, layer.bias])


def _check_depthwise(rng):
    layer = DepthwiseConv2d(3, 3, stride=2, dtype=np.float64)
    layer.init(rng)
    x = _rand(rng, (2, 3, 6, 6))
    return _layer_gradcheck(rng, layer, x, [layer.weight, layer.bias])


def _check_conv_transpose(rng):
    layer = ConvTranspose2d(3, 2, 4, 2, 1, dtype=np.float64)
    layer.init(rng)
    x = _rand(rng, (1, 3, 4, 4))
    return _layer_gradcheck(rng, layer, x, [layer.weight, layer.bias])


def _check_batchnorm_train(rng):
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.gamma.data[...] = rng.uniform(0.5, 1.5, 3)
    layer.beta.data[...] = rng.uniform(-0.5, 0.5, 3)
    layer.training = True
    x = _rand(rng, (2, 3, 4, 4))
    return _layer_gradcheck(rng, layer, x, [layer.gamma, layer.beta])


def _check_batchnorm_eval(rng):
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.running_mean[...] = rng.uniform(-0.5, 0.5, 3)
    layer.running_var[...] = rng.uniform(0.5, 1.5, 3)
    layer.training = False
    x = _rand(rng, (2, 3, 4, 4))
    return _layer_gradcheck(rng, layer, x, [layer.gamma, layer.beta])


def _check_linear(rng):
    layer = Linear(4, 5, dtype=np.float64)
    layer.init(rng)
    x = _rand(rng, (2, 3, 4))
    return _layer_gradcheck(rng, layer, x, [layer.weight, layer.bias])


def _check_maxpool(rng):
    layer = Pool2d("max", 2, 2)
    # distinct values so the argmax is stable under the FD perturbation
    vals = rng.permutation(2 * 3 * 6 * 6).astype(np.float64) / 50.0
    x = Tensor(vals.reshape(2, 3, 6, 6))
    return _layer_gradcheck(rng, layer, x, [])


def _check_avgpool(rng):
    layer = Pool2d("avg", 2, 2)
    x = _rand(rng, (2, 3, 6, 6))
    return _layer_gradcheck(rng, layer, x, [])


def _check_pixel_shuffle(rng):
    x = _rand(rng, (1, 8, 3, 3))
    w = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)))
    return gradcheck(lambda t: T.sum_all(T.mul(pixel_shuffle(t, 2), w)), [x])


def _check_upsample_nearest(rng):
    x = _rand(rng, (1, 2, 3, 3))
    w = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)))
    return gradcheck(lambda t: T.sum_all(T.mul(upsample_nearest(t, 2), w)), [x])


def _check_upsample_bilinear(rng):
    x = _rand(rng, (1, 2, 3, 3))
    w = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)))
    return gradcheck(lambda t: T.sum_all(T.mul(upsample_bilinear(t, 2), w)), [x])


def _check_injected_fault(rng):
    """Deliberately wrong backward (factor 2) - must be flagged, never pass."""
    x = _rand(rng, (2, 3))

    def broken_double(t):
        def backward(g):
            return (2.0 * g * 2.0 * t.data,)  # correct is 2*t

        return T._result(t.data**2, (t,), backward)

    return gradcheck(lambda t: T.sum_all(broken_double(t)), [x])


GRADCHECK_OPS = {
    "add": _check_add,
    "add_bias": _check_add_bias,
    "mul": _check_mul,
    "scale": _check_scale,
    "matmul_batched": _check_matmul,
    "softmax": _check_softmax,
    "relu": _check_relu,
    "sigmoid": _check_sigmoid,
    "log": _check_log,
    "concat_channels": _check_concat,
    "reshape_transpose": _check_reshape_transpose,
    "conv2d": _check_conv2d,
    "conv2d_1x3": _check_conv2d_1x3,
    "depthwise_conv2d": _check_depthwise,
    "conv_transpose2d": _check_conv_transpose,
    "batchnorm_train": _check_batchnorm_train,
    "batchnorm_eval": _check_batchnorm_eval,
    "linear": _check_linear,
    "maxpool": _check_maxpool,
    "avgpool": _check_avgpool,
    "pixel_shuffle": _check_pixel_shuffle,
    "upsample_nearest": _check_upsample_nearest,
    "upsample_bilinear": _check_upsample_bilinear,
}


def run_gradcheck_suite(ops="all", tolerance=1e-6, seed=0, inject_fault=False):
    """Run the named checks; returns (name, max_rel_err, within_tolerance) rows."""
    if ops == "all":
        names = list(GRADCHECK_OPS)
    else:
        names = [n.strip() for n in ops.split(",") if n.strip()]
        unknown = [n for n in names if n not in GRADCHECK_OPS]
        if unknown:
            raise ValueError(f"unknown op name(s): {unknown}; choose from {sorted(GRADCHECK_OPS)}")
    rows = []
    for name in names:
        rng = np.random.default_rng(seed)
        err = GRADCHECK_OPS[name](rng)
        rows.append((name, err, err < tolerance))
    if inject_fault:
        rng = np.random.default_rng(seed)
        err = _check_injected_fault(rng)
        rows.append(("injected_fault", err, err < tolerance))
    return rows
