"""Attention mechanisms, scoring functions and positional encodings.

All weight functions work on ``B x M`` score matrices with a boolean validity
mask of the same shape. Padded positions always receive exactly zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import functional as F
from .core.nn import Conv1d, Dense, Module, Parameter
from .core.tensor import (Tensor, clamp_min, concat, exp, logaddexp, matmul, sigmoid, softmax, sqrt, square,
                          tanh, tsum)

MECHANISMS = ("content", "penalized", "location", "monotonic", "chunkwise",
              "hybrid-monotonic", "hybrid-chunkwise")
MONOTONIC = ("monotonic", "chunkwise", "hybrid-monotonic", "hybrid-chunkwise")
CHUNKWISE = ("chunkwise", "hybrid-chunkwise")
HYBRID = ("hybrid-monotonic", "hybrid-chunkwise")


@dataclass
class AttentionConfig:
    mechanism: str = "hybrid-monotonic"
    score_form: str = "normalized"      # standard | normalized
    score_style: str = "bahdanau"       # bahdanau | luong
    attention_dim: int = 128
    chunk_window: int = 3
    location_kernel: int = 7
    location_filters: int = 20
    positional_encoding: str = "none"   # none | sinusoid | learned
    max_positions: int = 512
    summary_dim: int = 128
    score_bias_init: float = 0.0
    sigmoid_noise: float = 0.0

    def validate(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown attention mechanism {self.mechanism!r}")
        if self.score_form not in ("standard", "normalized"):
            raise ValueError(f"unknown score form {self.score_form!r}")
        if self.score_style not in ("bahdanau", "luong"):
            raise ValueError(f"unknown score style {self.score_style!r}")
        if self.score_style == "luong" and (self.score_form == "normalized" or self.mechanism in HYBRID):
            raise ValueError("luong scoring supports neither the normalized form nor hybrid mechanisms")
        if self.chunk_window < 1:
            raise ValueError("chunk window must be >= 1")
        if self.positional_encoding not in ("none", "sinusoid", "learned"):
            raise ValueError(f"unknown positional encoding {self.positional_encoding!r}")


@dataclass
class AttentionState:
    """Per-step carry. ``prev_weights`` are the last emitted weights,
    ``prev_alpha`` the monotonic alignment (equal to them for monotonic),
    ``log_acc`` the running log-sum of exp(scores) for penalized attention and
    ``kappa`` the location window centre."""

    prev_weights: Tensor
    prev_alpha: Tensor
    log_acc: Tensor | None = None
    kappa: Tensor | None = None
    step: int = 0

    @property
    def accumulator(self) -> np.ndarray | None:
        return None if self.log_acc is None else np.exp(self.log_acc.data.astype(np.float64))

    def select(self, index: np.ndarray) -> "AttentionState":
        """Rows ``index`` of every carried tensor (used for beam branching)."""
        pick = lambda t: None if t is None else F.take_rows(t, index, axis=0)
        return AttentionState(pick(self.prev_weights), pick(self.prev_alpha), pick(self.log_acc),
                              pick(self.kappa), self.step)


@dataclass
class ContextVector:
    context: Tensor      # B x o
    weights: Tensor      # B x M
    summary: Tensor      # B x summary_dim


@dataclass
class Memory:
    """Encoded sequence prepared once per utterance for repeated attention."""

    values: Tensor             # B x M x o, positions injected
    keys: Tensor | None        # B x M x A (W_h h_j)
    chunk_keys: Tensor | None  # B x M x A for chunk energies
    mask: np.ndarray           # B x M bool

    def select(self, index: np.ndarray) -> "Memory":
        pick = lambda t: None if t is None else F.take_rows(t, index, axis=0)
        return Memory(pick(self.values), pick(self.keys), pick(self.chunk_keys), self.mask[index])


# -- weight functions -------------------------------------------------------
def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every row needs at least one valid position")
    return mask


def attend_content(scores: Tensor, mask) -> Tensor:
    """Masked softmax over positions."""
    return softmax(scores, axis=-1, mask=_check_mask(mask))


def attend_penalized(scores: Tensor, mask, log_acc: Tensor | None) -> tuple[Tensor, Tensor]:
    """Divide exp(score) by the accumulated exp(score) of earlier steps, then
    sum-normalize. Works in log space: ``softmax(e - log_acc)``.

    Returns the weights and the updated log accumulator.
    """
    mask = _check_mask(mask)
    temporal = scores if log_acc is None else scores - log_acc
    weights = softmax(temporal, axis=-1, mask=mask)
    new_acc = scores if log_acc is None else logaddexp(log_acc, scores)
    return weights, new_acc


def monotonic_alignment(p: Tensor, prev_alpha: Tensor) -> Tensor:
    """Expected monotonic alignment from choosing probabilities ``p``.

    Uses the cumulative form ``q_j = (1 - p_{j-1}) q_{j-1} + alpha_prev_j``,
    ``alpha_j = p_j q_j`` which needs no division and so stays stable when
    ``p`` saturates. Accumulation is in float64.
    """
    pd = p.data.astype(np.float64)
    ad = prev_alpha.data.astype(np.float64)
    B, M = pd.shape
    q = np.empty((B, M))
    q[:, 0] = ad[:, 0]
    for j in range(1, M):
        q[:, j] = (1.0 - pd[:, j - 1]) * q[:, j - 1] + ad[:, j]
    alpha = pd * q

    def backward(g):
        g = g.astype(np.float64)
        gp = np.empty((B, M))
        gq = np.empty((B, M))
        gq_next = np.zeros(B)
        for j in range(M - 1, -1, -1):
            gq[:, j] = g[:, j] * pd[:, j] + gq_next * (1.0 - pd[:, j])
            gp[:, j] = (g[:, j] - gq_next) * q[:, j]
            gq_next = gq[:, j]
        return gp.astype(p.dtype), gq.astype(prev_alpha.dtype)

    return Tensor.from_op(alpha.astype(p.dtype), (p, prev_alpha), backward)


def attend_monotonic(scores: Tensor, mask, prev_alpha: Tensor, noise: np.ndarray | None = None) -> Tensor:
    """Expected alignment with choosing probabilities ``sigmoid(scores)``;
    padded positions never stop the scan so their mass falls off the end."""
    mask = _check_mask(mask)
    if noise is not None:
        scores = scores + noise
    p = sigmoid(scores) * mask.astype(scores.dtype)
    return monotonic_alignment(p, prev_alpha)


def _band(M: int, w: int, dtype) -> np.ndarray:
    # band[l, k] = 1 when k - w < l <= k
    idx = np.arange(M)
    diff = idx[None, :] - idx[:, None]
    return ((diff >= 0) & (diff < w)).astype(dtype)


def attend_chunkwise(alpha: Tensor, energies: Tensor, mask, window: int = 3) -> Tensor:
    """Spread each monotonic stop probability ``alpha_k`` over the length-``window``
    chunk ending at ``k`` with softmax weights from ``energies``."""
    mask = _check_mask(mask)
    fmask = mask.astype(alpha.dtype)
    if window == 1:
        return alpha * fmask
    M = alpha.shape[-1]
    band = Tensor(_band(M, window, alpha.dtype))
    # constant shift cancels between numerator and denominator
    shift = np.max(np.where(mask, energies.data, -np.inf), axis=-1, keepdims=True)
    ex = exp(energies - shift) * fmask
    denom = matmul(ex, band)                          # sum over each chunk ending at k
    safe = np.where(mask, 0.0, 1.0).astype(alpha.dtype)  # avoid 0/0 on padding
    ratio = alpha * fmask / (denom + safe)
    spread = matmul(ratio, band.transpose())           # sum over chunks containing j
    return ex * spread


def attend_location(kappa_prev: Tensor, delta_raw: Tensor, width_raw: Tensor, mask) -> tuple[Tensor, Tensor]:
    """Single Gaussian window; the centre advances by ``exp(delta_raw)`` and the
    width is ``exp(width_raw)``. Returns ``(weights, kappa)``."""
    mask = _check_mask(mask)
    B, M = mask.shape
    kappa = kappa_prev + exp(delta_raw)
    grid = np.broadcast_to(np.arange(M, dtype=kappa.dtype), (B, M))
    dist2 = square(Tensor(grid) - kappa)
    logits = dist2 * exp(width_raw * -2.0) * -0.5
    return softmax(logits, axis=-1, mask=mask), kappa


def context(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted sum of value vectors: ``B x M`` with ``B x M x o`` -> ``B x o``."""
    B, M = weights.shape
    return matmul(weights.reshape(B, 1, M), values).reshape(B, values.shape[-1])


# -- positional encodings ----------------------------------------------------
def sinusoid_table(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / dim)
    angles = pos * rates
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


def positional_encoding(H: Tensor, scheme: str, table: Tensor | None = None) -> Tensor:
    if scheme == "none":
        return H
    B, M, d = H.shape
    if scheme == "sinusoid":
        return H + sinusoid_table(M, d).astype(H.dtype)
    if scheme == "learned":
        if table is None:
            raise ValueError("learned positional encoding needs a table")
        if M > table.shape[0]:
            raise ValueError(f"sequence of length {M} exceeds {table.shape[0]} learned positions")
        return H + table[:M]
    raise ValueError(f"unknown positional encoding {scheme!r}")


# -- scoring -----------------------------------------------------------------
class BahdanauScorer(Module):
    """``v^T tanh(W_s s + W_h h + [W_f f] + b)``, optionally weight-normalized
    as ``g v^T/|v| tanh(...) + r``."""

    def __init__(self, query_dim: int, key_dim: int, dim: int, rng, normalized: bool = False,
                 location_features: int = 0, bias_init: float = 0.0, dtype=np.float32):
        self.w_s = Dense(query_dim, dim, rng, bias=True, dtype=dtype)
        self.w_h = Dense(key_dim, dim, rng, bias=False, dtype=dtype)
        self.w_f = Dense(location_features, dim, rng, bias=False, dtype=dtype) if location_features else None
        self.v = Parameter(rng.uniform(-np.sqrt(6.0 / (dim + 1)), np.sqrt(6.0 / (dim + 1)), size=(dim, 1)).astype(dtype))
        self.normalized = normalized
        if normalized:
            self.g = Parameter(np.array(1.0 / np.sqrt(dim), dtype=dtype))
            self.r = Parameter(np.array(bias_init, dtype=dtype))

    def project_keys(self, H: Tensor) -> Tensor:
        return self.w_h(H)

    def __call__(self, s: Tensor, keys: Tensor, location: Tensor | None = None) -> Tensor:
        B, M, A = keys.shape
        pre = keys + self.w_s(s).reshape(B, 1, A)
        if location is not None:
            pre = pre + self.w_f(location)
        act = tanh(pre)
        if self.normalized:
            v = self.v * (self.g / sqrt(clamp_min(tsum(square(self.v)), 1e-24)))
            return matmul(act, v).reshape(B, M) + self.r
        return matmul(act, self.v).reshape(B, M)


class LuongScorer(Module):
    """``s^T W_h h``."""

    def __init__(self, query_dim: int, key_dim: int, rng, dtype=np.float32):
        self.w_h = Dense(key_dim, query_dim, rng, bias=False, dtype=dtype)

    def project_keys(self, H: Tensor) -> Tensor:
        return self.w_h(H)

    def __call__(self, s: Tensor, keys: Tensor, location: Tensor | None = None) -> Tensor:
        B, M, D = keys.shape
        return matmul(keys, s.reshape(B, D, 1)).reshape(B, M)


class Attention(Module):
    """One configurable attention head over encoded features."""

    def __init__(self, config: AttentionConfig, query_dim: int, feature_dim: int, rng, dtype=np.float32):
        config.validate()
        self.config = config
        self.query_dim = query_dim
        mech = config.mechanism
        self.scorer = None
        self.chunk_scorer = None
        self.location_conv = None
        self.location_head = None
        self.pos_table = None
        normalized = config.score_form == "normalized"
        if mech == "location":
            self.location_head = Dense(query_dim, 2, rng, dtype=dtype)
        else:
            hybrid_feats = config.location_filters if mech in HYBRID else 0
            if config.score_style == "luong":
                self.scorer = LuongScorer(query_dim, feature_dim, rng, dtype=dtype)
            else:
                self.scorer = BahdanauScorer(query_dim, feature_dim, config.attention_dim, rng, normalized,
                                             hybrid_feats, config.score_bias_init, dtype)
            if hybrid_feats:
                self.location_conv = Conv1d(config.location_kernel, 1, config.location_filters, rng, dtype)
            if mech in CHUNKWISE:
                self.chunk_scorer = BahdanauScorer(query_dim, feature_dim, config.attention_dim, rng, False,
                                                   0, 0.0, dtype)
        if config.positional_encoding == "learned":
            self.pos_table = Parameter(rng.normal(0.0, 0.01, size=(config.max_positions, feature_dim)).astype(dtype))
        self.summary = Dense(feature_dim + query_dim, config.summary_dim, rng, dtype=dtype)

    def prepare(self, H: Tensor, lengths) -> Memory:
        B, M, _ = H.shape
        mask = F.sequence_mask(lengths, M)
        values = positional_encoding(H, self.config.positional_encoding, self.pos_table)
        keys = self.scorer.project_keys(values) if self.scorer is not None else None
        chunk_keys = self.chunk_scorer.project_keys(values) if self.chunk_scorer is not None else None
        return Memory(values, keys, chunk_keys, mask)

    def initial_state(self, memory: Memory) -> AttentionState:
        B, M = memory.mask.shape
        dt = memory.values.dtype
        one_hot = np.zeros((B, M), dtype=dt)
        one_hot[:, 0] = 1.0
        kappa = Tensor(np.zeros((B, 1), dtype=dt)) if self.config.mechanism == "location" else None
        return AttentionState(Tensor(one_hot), Tensor(one_hot), None, kappa, 0)

    def summarize(self, c: Tensor, s: Tensor) -> Tensor:
        return tanh(self.summary(concat([c, s], axis=-1)))

    def initial_summary(self, memory: Memory, state: AttentionState) -> Tensor:
        """Summary vector for a zero decoder state, attending with the initial weights."""
        B = memory.mask.shape[0]
        s0 = Tensor(np.zeros((B, self.query_dim), dtype=memory.values.dtype))
        return self.summarize(context(state.prev_weights, memory.values), s0)

    def scores(self, s: Tensor, memory: Memory, state: AttentionState) -> Tensor:
        location = None
        if self.location_conv is not None:
            B, M = state.prev_weights.shape
            location = self.location_conv(state.prev_weights.reshape(B, M, 1))
        return self.scorer(s, memory.keys, location)

    def __call__(self, s: Tensor, memory: Memory, state: AttentionState, train: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[ContextVector, AttentionState]:
        mech = self.config.mechanism
        mask = memory.mask
        log_acc, kappa, alpha = state.log_acc, state.kappa, None
        if mech == "location":
            raw = self.location_head(s)
            weights, kappa = attend_location(state.kappa, raw[:, 0:1], raw[:, 1:2], mask)
        else:
            e = self.scores(s, memory, state)
            if mech == "content":
                weights = attend_content(e, mask)
            elif mech == "penalized":
                weights, log_acc = attend_penalized(e, mask, state.log_acc)
            else:
                noise = None
                if train and self.config.sigmoid_noise > 0.0:
                    rng = rng if rng is not None else np.random.default_rng()
                    noise = rng.normal(0.0, self.config.sigmoid_noise, size=e.shape).astype(e.dtype)
                alpha = attend_monotonic(e, mask, state.prev_alpha, noise)
                weights = alpha
                if mech in CHUNKWISE:
                    u = self.chunk_scorer(s, memory.chunk_keys)
                    weights = attend_chunkwise(alpha, u, mask, self.config.chunk_window)
        c = context(weights, memory.values)
        new_state = AttentionState(weights, alpha if alpha is not None else weights, log_acc, kappa, state.step + 1)
        return ContextVector(c, weights, self.summarize(c, s)), new_state
