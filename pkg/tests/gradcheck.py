"""Central finite differences of forward values; no backward closure is involved."""
from __future__ import annotations

import numpy as np

from distillbox import tensor as T
from distillbox.tensor import Tensor, no_grad

H = 1e-5


def numerical_grads(fn, arrays: list[np.ndarray], h: float = H) -> list[np.ndarray]:
    """d fn / d arrays[i] for a scalar-valued ``fn(*arrays) -> float``."""
    grads = []
    for idx, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        for pos in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[idx][pos] += h
            minus[idx][pos] -= h
            g[pos] = (fn(*plus) - fn(*minus)) / (2 * h)
        grads.append(g)
    return grads


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise deviation, relative to the gradient's overall magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def check_op(op, arrays: list[np.ndarray], weights: np.ndarray | None = None, h: float = H) -> float:
    """Compare autograd and finite differences for ``sum(weights * op(*tensors))``."""
    with no_grad():
        out_shape = op(*[Tensor(a) for a in arrays]).shape
    if weights is None:
        weights = np.ones(out_shape)

    def scalar(*arrs):
        with no_grad():
            return float(np.sum(op(*[Tensor(a) for a in arrs]).data * weights))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*leaves)
    T.reduce_sum(T.mul(out, Tensor(weights))).backward()
    numeric = numerical_grads(scalar, arrays, h)
    return max(rel_err(leaf.grad, n) for leaf, n in zip(leaves, numeric))
