"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-3) -> np.ndarray:
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data)
        flat[i] = orig - step
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # below a norm of 1e-6 central differences are roundoff, so compare absolutely
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-3) -> list[float]:
    """Relative error between backprop and central differences for each input.

    ``fn`` must rebuild the scalar output from ``inputs`` on every call and be
    deterministic. Inputs should be float64.
    """
    for x in inputs:
        x.grad = None
    fn().backward(inputs)
    analytic = [x.grad.copy() for x in inputs]
    return [relative_error(a, numerical_grad(fn, x, step)) for a, x in zip(analytic, inputs)]


def directional_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                      step: float = 1e-5) -> float:
    """Compare the backprop directional derivative along a random unit
    direction with its central difference. Cheap for many parameters."""
    for x in inputs:
        x.grad = None
    fn().backward(inputs)
    dirs = [rng.normal(size=x.shape) for x in inputs]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float(np.sum(x.grad * d)) for x, d in zip(inputs, dirs))
    originals = [x.data.copy() for x in inputs]
    for x, d, o in zip(inputs, dirs, originals):
        x.data = o + step * d
    up = float(fn().data)
    for x, d, o in zip(inputs, dirs, originals):
        x.data = o - step * d
    down = float(fn().data)
    for x, o in zip(inputs, originals):
        x.data = o
    numeric = (up - down) / (2.0 * step)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
