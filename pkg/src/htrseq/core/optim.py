"""ADAM with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import Parameter


def global_norm(grads: Sequence[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_gradients(grads: Sequence[np.ndarray], threshold: float = 4.0) -> tuple[list[np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``threshold``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        return [(g * scale).astype(g.dtype, copy=False) for g in grads], norm
    return list(grads), norm


def clip_parameter_grads(params: Sequence[Parameter], threshold: float) -> float:
    live = [p for p in params if p.trainable and p.grad is not None]
    clipped, norm = clip_gradients([p.grad for p in live], threshold)
    for p, g in zip(live, clipped):
        p.grad = g
    return norm


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float | None = None) -> None:
    """Apply one ADAM update in place to every trainable parameter.

    ``lr`` overrides ``state.lr`` for this step (learning-rate schedules).
    """
    lr = state.lr if lr is None else lr
    trainable = [p for p in params if p.trainable]
    for p in trainable:
        if p.grad is None:
            raise ValueError(f"trainable parameter {p.name!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in trainable:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)
