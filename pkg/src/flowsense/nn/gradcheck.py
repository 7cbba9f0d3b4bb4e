"""Central finite-difference verification of analytic backward passes."""

from __future__ import annotations

import numpy as np

from .layers import Layer


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _numeric_grad(f, x: np.ndarray, eps: float, reduce=None) -> np.ndarray:
    # with ``reduce`` given, f returns a tensor and the difference is taken
    # elementwise before reducing, so untouched outputs cancel exactly
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        diff = hi - lo if reduce is None else reduce(hi - lo)
        gflat[i] = diff / (2 * eps)
    return g


def finite_diff_check(layer: Layer, x: np.ndarray, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients of
    the scalar sum(layer(x) * R) for a fixed random R, over the input and every
    parameter. Requires float64 input and parameters.

    The analytic pass runs in float64. The numeric probes run in extended
    precision (where the platform has it) so that their round-off stays well
    below the tolerances being checked; the layer is restored to float64."""
    if x.dtype != np.float64 or any(p.dtype != np.float64 for _, p in layer.named_parameters()):
        raise TypeError("finite_diff_check needs float64 input and parameters (use layer.astype(np.float64))")
    x = x.copy()
    out = layer.forward(x)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    dx = layer.backward(r)
    analytic = [dx] + [g.copy() for _, g in layer.named_grads()]

    wide = np.longdouble
    layer.astype(wide)
    xw, rw = x.astype(wide), r.astype(wide)

    def f():
        return layer.forward(xw).copy()

    def reduce(d):
        return np.sum(d * rw)

    try:
        numeric = [_numeric_grad(f, xw, eps, reduce)]
        numeric += [_numeric_grad(f, p, eps, reduce) for _, p in layer.named_parameters()]
    finally:
        layer.astype(np.float64)
    numeric = [n.astype(np.float64) for n in numeric]
    return max(float(relative_error(a, n).max(initial=0.0)) for a, n in zip(analytic, numeric))


def function_grad_check(f, grad: np.ndarray, x: np.ndarray, eps: float = 1e-6) -> float:
    """Max relative error of ``grad`` against central differences of scalar f(x)."""
    x = x.copy()
    numeric = _numeric_grad(lambda: f(x), x, eps)
    return float(relative_error(grad, numeric).max(initial=0.0))
