"""Randomized scalar probe functions for every autodiff primitive.

Shared between the unit tests (a few cases per primitive) and the
acceptance suite (>=100 cases per primitive).  Each case is a pair
(f, x) where f maps a float64 Tensor to a scalar Tensor through the
primitive under test, with constants drawn from the given generator.
Reductions are weighted sums so off-diagonal gradient structure is
exercised, and kinked inputs (relu) are pushed away from the kink.
"""

import numpy as np

from tinyvogue import autodiff as ad


def _w(rng, shape):
    return ad.constant(rng.standard_normal(shape))


def _weighted_sum(t, w):
    return ad.tsum(ad.mul(t, w))


def primitive_case(kind: str, rng: np.random.Generator):
    """Return (f, x) for one randomized gradient check of `kind`."""
    if kind == "matmul":
        side = rng.integers(0, 2)
        if side == 0:
            b = ad.constant(rng.standard_normal((4, 2)))
            w = _w(rng, (3, 2))
            return (lambda x: _weighted_sum(ad.matmul(x, b), w)), ad.Tensor(rng.standard_normal((3, 4)))
        a = ad.constant(rng.standard_normal((3, 4)))
        w = _w(rng, (3, 2))
        return (lambda x: _weighted_sum(ad.matmul(a, x), w)), ad.Tensor(rng.standard_normal((4, 2)))
    if kind == "add":
        if rng.integers(0, 2) == 0:
            b = ad.constant(rng.standard_normal((3, 4)))
            w = _w(rng, (3, 4))
            return (lambda x: _weighted_sum(ad.add(x, b), w)), ad.Tensor(rng.standard_normal((3, 4)))
        a = ad.constant(rng.standard_normal((3, 4)))  # bias-add, grad wrt the bias
        w = _w(rng, (3, 4))
        return (lambda x: _weighted_sum(ad.add(a, x), w)), ad.Tensor(rng.standard_normal(4))
    if kind == "sub":
        b = ad.constant(rng.standard_normal((3, 4)))
        w = _w(rng, (3, 4))
        if rng.integers(0, 2) == 0:
            return (lambda x: _weighted_sum(ad.sub(x, b), w)), ad.Tensor(rng.standard_normal((3, 4)))
        return (lambda x: _weighted_sum(ad.sub(b, x), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "mul":
        b = ad.constant(rng.standard_normal((3, 4)) + 0.5)
        w = _w(rng, (3, 4))
        return (lambda x: _weighted_sum(ad.mul(x, b), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "scale":
        c = float(rng.standard_normal()) + 0.1
        w = _w(rng, (2, 3))
        return (lambda x: _weighted_sum(ad.scale(x, c), w)), ad.Tensor(rng.standard_normal((2, 3)))
    if kind == "exp":
        w = _w(rng, (2, 3))
        return (lambda x: _weighted_sum(ad.exp(x), w)), ad.Tensor(rng.uniform(-2, 2, (2, 3)))
    if kind == "log":
        w = _w(rng, (2, 3))
        return (lambda x: _weighted_sum(ad.log(x), w)), ad.Tensor(rng.uniform(0.2, 3.0, (2, 3)))
    if kind == "relu":
        x = rng.standard_normal((3, 4))
        x = x + np.where(np.abs(x) < 0.1, np.sign(x) * 0.2 + (x == 0) * 0.2, 0.0)  # keep clear of the kink
        w = _w(rng, (3, 4))
        return (lambda t: _weighted_sum(ad.relu(t), w)), ad.Tensor(x)
    if kind == "sigmoid":
        w = _w(rng, (3, 4))
        return (lambda x: _weighted_sum(ad.sigmoid(x), w)), ad.Tensor(rng.uniform(-4, 4, (3, 4)))
    if kind == "tanh":
        w = _w(rng, (3, 4))
        return (lambda x: _weighted_sum(ad.tanh(x), w)), ad.Tensor(rng.uniform(-3, 3, (3, 4)))
    if kind == "softmax":
        w = _w(rng, (3, 5))
        return (lambda x: _weighted_sum(ad.softmax(x), w)), ad.Tensor(rng.standard_normal((3, 5)))
    if kind == "log_softmax":
        w = _w(rng, (3, 5))
        return (lambda x: _weighted_sum(ad.log_softmax(x), w)), ad.Tensor(rng.standard_normal((3, 5)))
    if kind == "gather":
        if rng.integers(0, 2) == 0:
            idx = rng.integers(0, 6, size=4)
            w = _w(rng, (4,))
            return (lambda x: _weighted_sum(ad.gather(x, idx), w)), ad.Tensor(rng.standard_normal((4, 6)))
        i = int(rng.integers(0, 5))
        return (lambda x: ad.gather(x, i)), ad.Tensor(rng.standard_normal(5))
    if kind == "sum":
        axis = [None, 0, -1][rng.integers(0, 3)]
        if axis is None:
            return (lambda x: ad.tsum(x)), ad.Tensor(rng.standard_normal((3, 4)))
        w = _w(rng, (4,) if axis == 0 else (3,))
        return (lambda x: _weighted_sum(ad.tsum(x, axis=axis), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "mean":
        axis = [None, 0, -1][rng.integers(0, 3)]
        if axis is None:
            return (lambda x: ad.tmean(x)), ad.Tensor(rng.standard_normal((3, 4)))
        w = _w(rng, (4,) if axis == 0 else (3,))
        return (lambda x: _weighted_sum(ad.tmean(x, axis=axis), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "concat":
        axis = int(rng.integers(0, 2))
        c = ad.constant(rng.standard_normal((3, 4)))
        w = _w(rng, (6, 4) if axis == 0 else (3, 8))
        return (lambda x: _weighted_sum(ad.concat([x, c], axis=axis), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "reshape":
        w = _w(rng, (6, 2))
        return (lambda x: _weighted_sum(ad.reshape(x, (6, 2)), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "transpose":
        w = _w(rng, (4, 3))
        return (lambda x: _weighted_sum(ad.transpose(x), w)), ad.Tensor(rng.standard_normal((3, 4)))
    if kind == "embedding":
        ids = rng.integers(0, 5, size=6)  # repeats exercise scatter-add
        w = _w(rng, (6, 3))
        return (lambda x: _weighted_sum(ad.embedding(x, ids), w)), ad.Tensor(rng.standard_normal((5, 3)))
    raise AssertionError(f"no case generator for primitive {kind!r}")
