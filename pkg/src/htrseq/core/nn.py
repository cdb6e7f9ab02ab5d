"""Parameters, modules and the layers the recognizer is assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor. ``trainable=False`` freezes it for the optimizer."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag
        if not flag:
            self.grad = None


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}/{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + "/")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data) if p.trainable else None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.set_trainable(flag)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        self.weight = Parameter(xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, kernel, stride, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        ky, kx = kernel
        self.stride = tuple(stride)
        self.weight = Parameter(xavier_uniform(rng, (ky, kx, c_in, c_out), ky * kx * c_in, ky * kx * c_out, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride)


class Conv1d(Module):
    def __init__(self, kernel: int, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(xavier_uniform(rng, (kernel, c_in, c_out), kernel * c_in, kernel * c_out, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias)


class LSTM(Module):
    """Single-direction LSTM weights; usable per step or over a sequence."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, forget_bias: float = 1.0, dtype=np.float32):
        self.hidden = hidden
        self.w_ih = Parameter(xavier_uniform(rng, (n_in, 4 * hidden), n_in, 4 * hidden, dtype))
        self.w_hh = Parameter(xavier_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden, dtype))
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden:2 * hidden] = forget_bias
        self.b = Parameter(b)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return F.lstm_cell(x, h, c, self.w_ih, self.w_hh, self.b)

    def sequence(self, x: Tensor) -> Tensor:
        return F.lstm_sequence(x, self.w_ih, self.w_hh, self.b)


class BLSTM(Module):
    """Bidirectional LSTM whose output is the sum of both directions."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fwd = LSTM(n_in, hidden, rng, dtype=dtype)
        self.bwd = LSTM(n_in, hidden, rng, dtype=dtype)

    def __call__(self, x: Tensor, lengths: np.ndarray) -> Tensor:
        forward = self.fwd.sequence(x)
        rev = F.reverse_within_lengths(x, lengths)
        backward = F.reverse_within_lengths(self.bwd.sequence(rev), lengths)
        mask = F.sequence_mask(lengths, x.shape[1])[:, :, None].astype(x.dtype)
        return (forward + backward) * mask


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.table = Parameter(xavier_uniform(rng, (n, dim), n, dim, dtype))

    def __call__(self, ids) -> Tensor:
        return F.embedding_lookup(self.table, ids)
