"""Sequence losses: cross-entropy, CTC and their convex combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.tensor import Tensor, clamp_min, log, take_rows, tsum

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

# incremented on every ctc_losses call; lets callers check a regime never touched CTC
CTC_CALLS = 0


class LabelTooLongError(ValueError):
    pass


@dataclass
class LossConfig:
    lam: float = 0.5
    ctc_enabled: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lam > 0.0 and not self.ctc_enabled:
            raise ValueError("lambda > 0 requires a CTC-compatible encoder")


def cross_entropy(dists: Tensor, targets, mask=None) -> Tensor:
    """Sum over time of -log p(gold), averaged over the batch.

    ``dists`` holds probabilities, ``T x V`` or ``B x T x V``; ``targets`` the
    gold ids (no sos, eos included). ``mask`` zeroes padded steps.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if dists.ndim == 2:
        dists = dists.reshape((1,) + dists.shape)
        targets = targets[None]
        mask = None if mask is None else np.asarray(mask)[None]
    B, T, V = dists.shape
    if targets.shape != (B, T):
        raise ValueError(f"targets shape {targets.shape} does not match distributions {(B, T)}")
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    flat_idx = (np.arange(B * T) * V + np.where(mask, targets, 0).reshape(-1))
    gold = take_rows(dists.reshape(B * T * V), flat_idx).reshape(B, T)
    nll = -log(clamp_min(gold, PROB_FLOOR)) * mask.astype(dists.dtype)
    return tsum(nll) * (1.0 / B)


def min_frames(label: Sequence[int]) -> int:
    """Fewest frames a CTC alignment of ``label`` needs (blank between repeats)."""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """Move entries ``k`` places right (left when negative), filling with -inf."""
    out = np.full_like(x, -np.inf)
    if k > 0:
        out[k:] = x[:-k]
    else:
        out[:k] = x[-k:]
    return out


def ctc_forward_backward(log_probs: np.ndarray, label: Sequence[int], blank: int):
    """Log-space alpha/beta recursions for one sequence.

    Returns ``(log_likelihood, posterior)`` where ``posterior[t, k]`` is the
    occupancy of symbol ``k`` at frame ``t`` summed over all alignments.
    """
    T, K = log_probs.shape
    L = len(label)
    ext = np.full(2 * L + 1, blank, dtype=np.int64)
    ext[1::2] = label
    S = ext.size
    ninf = -np.inf
    # transitions from s-2 allowed onto a non-blank that differs from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]
    alpha = np.full((T, S), ninf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        s1 = _shift(prev, 1)
        s2 = np.where(skip, _shift(prev, 2), ninf)
        alpha[t] = _lse3(prev, s1, s2) + emit[t]

    beta = np.full((T, S), ninf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_next = np.zeros(S, dtype=bool)
    skip_next[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        n1 = _shift(nxt, -1)
        n2 = np.where(skip_next, _shift(nxt, -2), ninf)
        beta[t] = _lse3(nxt, n1, n2)

    ends = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    occ = np.exp(alpha + beta - ends)
    posterior = np.zeros((T, K))
    for s in range(S):
        posterior[:, ext[s]] += occ[:, s]
    return float(ends), posterior


def ctc_losses(logits: Tensor, lengths, labels: Sequence[Sequence[int]], blank: int | None = None):
    """Per-item CTC negative log-likelihoods over a batch of logit frames.

    ``logits`` is ``B x M x K`` (blank = last channel unless given).
    Returns ``(losses, skipped)``: a length-``B`` tensor with zeros at skipped
    items and the indices of items whose label cannot fit their frames.
    """
    global CTC_CALLS
    CTC_CALLS += 1
    B, M, K = logits.shape
    blank = K - 1 if blank is None else blank
    lengths = np.asarray(lengths, dtype=np.int64)
    out = np.zeros(B)
    grad = np.zeros((B, M, K))
    skipped = []
    for b in range(B):
        n = int(lengths[b])
        label = list(labels[b])
        if n < max(min_frames(label), 1):
            skipped.append(b)
            continue
        lp = _log_softmax64(logits.data[b, :n])
        ll, post = ctc_forward_backward(lp, label, blank)
        out[b] = -ll
        grad[b, :n] = np.exp(lp) - post
    if skipped:
        logger.warning("CTC skipped items %s: label longer than available frames", skipped)

    def backward(g):
        return ((grad * g[:, None, None]).astype(logits.dtype),)

    return Tensor.from_op(out.astype(logits.dtype), (logits,), backward), skipped


def ctc_loss(logits: Tensor, label: Sequence[int], blank: int | None = None) -> Tensor:
    """CTC loss for a single ``M x K`` logit sequence."""
    M = logits.shape[0]
    if M < max(min_frames(list(label)), 1):
        raise LabelTooLongError(f"label of length {len(label)} needs more than {M} frames")
    losses, _ = ctc_losses(logits.reshape((1,) + logits.shape), [M], [label], blank)
    return losses.reshape(())


def ctc_batch_loss(logits: Tensor, lengths, labels, blank: int | None = None):
    """Mean CTC loss over non-skipped items; returns ``(loss, skipped)``."""
    losses, skipped = ctc_losses(logits, lengths, labels, blank)
    kept = len(labels) - len(skipped)
    if kept == 0:
        return tsum(losses) * 0.0, skipped
    return tsum(losses) * (1.0 / kept), skipped


def hybrid_loss(l_ctc: Tensor | None, l_ce: Tensor | None, lam: float) -> Tensor:
    """``lam * l_ctc + (1 - lam) * l_ce``; the boundaries return a component untouched."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return l_ce
    if lam == 1.0:
        return l_ctc
    return l_ctc * lam + l_ce * (1.0 - lam)
