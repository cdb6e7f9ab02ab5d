"""Neural-network primitives with hand-written backward passes.

Layouts: images are ``B x H x W x C``, sequences are ``B x T x C``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _sigmoid, matmul, take_rows


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out, before, after)`` for ceil-mode "same" padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=(1, 1)) -> Tensor:
    """2-D convolution, "same" padding.

    ``x`` is ``B x H x W x Cin`` (a single ``H x W x Cin`` image is accepted),
    ``weight`` is ``ky x kx x Cin x Cout``.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    B, H, W, C = x.shape
    ky, kx, cin, cout = weight.shape
    sy, sx = stride
    if H == 0 or W == 0:
        raise ShapeError("conv2d input has a zero-sized spatial dimension")
    if cin != C:
        raise ShapeError(f"conv2d expects {cin} input channels, got {C}")
    Ho, pt, pb = same_padding(H, ky, sy)
    Wo, pl, pr = same_padding(W, kx, sx)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (ky, kx), axis=(1, 2))[:, ::sy, ::sx][:, :Ho, :Wo]
    # B x Ho x Wo x C x ky x kx -> rows of (ky, kx, C)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, ky * kx * C)
    wmat = weight.data.reshape(ky * kx * C, cout)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(B, Ho, Wo, ky, kx, C)
            gxp = np.zeros_like(xp)
            for i in range(ky):
                for j in range(kx):
                    gxp[:, i:i + sy * Ho:sy, j:j + sx * Wo:sx, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, pt:pt + H, pl:pl + W, :]
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = Tensor.from_op(out, parents, lambda g: backward(g)[: len(parents)])
    return res.reshape(res.shape[1:]) if squeeze else res


def maxpool2d(x: Tensor, kernel=(2, 2), stride=(2, 2), widths: np.ndarray | None = None) -> Tensor:
    """Max pooling, "same" padding.

    Padding cells and, when ``widths`` is given, columns at or beyond each
    item's valid width never win a window. Windows with no valid cell yield 0.
    """
    B, H, W, C = x.shape
    ky, kx = kernel
    sy, sx = stride
    if H == 0 or W == 0:
        raise ShapeError("maxpool2d input has a zero-sized spatial dimension")
    Ho, pt, pb = same_padding(H, ky, sy)
    Wo, pl, pr = same_padding(W, kx, sx)
    src = x.data
    if widths is not None:
        valid = np.arange(W)[None, :] < np.asarray(widths)[:, None]
        src = np.where(valid[:, None, :, None], src, -np.inf)
    xp = np.pad(src, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    out = np.full((B, Ho, Wo, C), -np.inf, dtype=x.dtype)
    arg = np.zeros((B, Ho, Wo, C), dtype=np.int64)
    for i in range(ky):
        for j in range(kx):
            cand = xp[:, i:i + sy * Ho:sy, j:j + sx * Wo:sx, :]
            better = cand > out
            out = np.where(better, cand, out)
            arg = np.where(better, i * kx + j, arg)
    empty = ~np.isfinite(out)
    out = np.where(empty, 0.0, out).astype(x.dtype, copy=False)

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        g = np.where(empty, 0.0, g)
        for i in range(ky):
            for j in range(kx):
                hit = arg == i * kx + j
                gxp[:, i:i + sy * Ho:sy, j:j + sx * Wo:sx, :] += np.where(hit, g, 0.0)
        return (gxp[:, pt:pt + H, pl:pl + W, :],)

    return Tensor.from_op(out, (x,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Stride-1 "same" 1-D convolution over time; ``x`` is ``B x T x Cin``,
    ``weight`` is ``k x Cin x Cout``."""
    B, T, C = x.shape
    k, cin, cout = weight.shape
    out = conv2d(x.reshape(B, 1, T, C), weight.reshape(1, k, cin, cout), bias)
    return out.reshape(B, T, cout)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense expects last dim {weight.shape[0]}, got {x.shape}")
    y = matmul(x, weight)
    return y + bias if bias is not None else y


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    return take_rows(table, ids, axis=0)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` at train time."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return Tensor.from_op(x.data * keep, (x,), lambda g: (g * keep,))


def _lstm_gates(z: np.ndarray, H: int):
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    return i, f, g, o


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step (gate order i, f, g, o). Returns ``(h_new, c_new)``."""
    H = h.shape[-1]
    if w_ih.shape[0] != x.shape[-1] or w_hh.shape != (H, 4 * H):
        raise ShapeError("lstm_cell weight shapes do not match inputs")
    z = x.data @ w_ih.data + h.data @ w_hh.data + b.data
    i, f, g, o = _lstm_gates(z, H)
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    both = np.concatenate([h_new, c_new], axis=-1)

    def backward(gboth):
        dh = gboth[..., :H]
        dc = gboth[..., H:] + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=-1)
        return (dz @ w_ih.data.T, dz @ w_hh.data.T, dc * f,
                x.data.T @ dz, h.data.T @ dz, dz.sum(axis=0))

    out = Tensor.from_op(both, (x, h, c, w_ih, w_hh, b), backward)
    return out[:, :H], out[:, H:]


def lstm_sequence(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM from a zero state over ``x`` (``B x T x In``); returns all
    hidden states ``B x T x H``. Backward is fused truncation-free BPTT."""
    B, T, In = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (In, 4 * H):
        raise ShapeError(f"lstm weight {w_ih.shape} does not match input size {In}")
    dt = x.dtype
    zx = (x.data.reshape(B * T, In) @ w_ih.data + b.data).reshape(B, T, 4 * H)
    hs = np.zeros((B, T + 1, H), dtype=dt)
    cs = np.zeros((B, T + 1, H), dtype=dt)
    gates = np.empty((B, T, 4 * H), dtype=dt)
    whh = w_hh.data
    for t in range(T):
        z = zx[:, t] + hs[:, t] @ whh
        i, f, g, o = _lstm_gates(z, H)
        gates[:, t] = np.concatenate([i, f, g, o], axis=-1)
        cs[:, t + 1] = f * cs[:, t] + i * g
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])

    def backward(gout):
        dz_all = np.empty((B, T, 4 * H), dtype=dt)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            g = gates[:, t, 2 * H:3 * H]
            o = gates[:, t, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = gout[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * cs[:, t] * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ], axis=-1)
            dz_all[:, t] = dz
            dh_next = dz @ whh.T
            dc_next = dc * f
        dz2 = dz_all.reshape(B * T, 4 * H)
        gx = (dz2 @ w_ih.data.T).reshape(B, T, In) if x.requires_grad else None
        gwih = x.data.reshape(B * T, In).T @ dz2
        gwhh = hs[:, :T].reshape(B * T, H).T @ dz2
        return gx, gwih, gwhh, dz2.sum(axis=0)

    return Tensor.from_op(hs[:, 1:].copy(), (x, w_ih, w_hh, b), backward)


def reverse_within_lengths(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Reverse each item's first ``lengths[b]`` steps in place; padding stays put."""
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    src = np.where(t < L, L - 1 - t, t)
    flat = (np.arange(B)[:, None] * T + src).reshape(-1)
    rest = x.shape[2:]
    y = take_rows(x.reshape((B * T,) + rest), flat, axis=0)
    return y.reshape((B, T) + rest)


def sequence_mask(lengths, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]
