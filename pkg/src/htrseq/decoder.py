"""Attention LSTM decoder with teacher forcing, greedy and beam-search inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .attention import Attention, AttentionConfig, AttentionState, Memory
from .core import functional as F
from .core.nn import Dense, Embedding, LSTM, Module
from .core.tensor import Tensor, concat, no_grad, softmax, stack


class Alphabet:
    """Character inventory plus reserved ids.

    Layout: characters ``0..n-1``, CTC blank ``n``, ``eos`` ``n+1``,
    ``sos`` ``n+2``, ``pad`` ``n+3``. Decoder outputs cover ``0..n+1`` with the
    blank slot disabled, so output index equals token id.
    """

    def __init__(self, characters: Sequence[str]):
        chars = list(characters)
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet characters must be unique")
        if not chars:
            raise ValueError("alphabet is empty")
        self.characters = chars
        self._index = {c: i for i, c in enumerate(chars)}
        n = len(chars)
        self.blank_id = n
        self.eos_id = n + 1
        self.sos_id = n + 2
        self.pad_id = n + 3

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "Alphabet":
        return cls(sorted(set("".join(texts))))

    def __len__(self) -> int:
        return len(self.characters)

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.characters == other.characters

    @property
    def ctc_size(self) -> int:
        return len(self.characters) + 1

    @property
    def output_size(self) -> int:
        return len(self.characters) + 2

    @property
    def embedding_size(self) -> int:
        return len(self.characters) + 4

    def output_mask(self) -> np.ndarray:
        mask = np.ones(self.output_size, dtype=bool)
        mask[self.blank_id] = False
        return mask

    def encode(self, text: str) -> list[int]:
        missing = sorted({c for c in text if c not in self._index})
        if missing:
            raise KeyError(f"characters not in alphabet: {missing}")
        return [self._index[c] for c in text]

    def decode(self, ids: Sequence[int]) -> str:
        n = len(self.characters)
        return "".join(self.characters[i] for i in ids if 0 <= i < n)

    def decoder_target(self, text: str) -> list[int]:
        return [self.sos_id] + self.encode(text) + [self.eos_id]


@dataclass
class DecoderConfig:
    hidden_units: int = 256
    embedding_dim: int = 64
    dropout: float = 0.5
    beam_width: int = 16
    max_decode_steps: int | None = None   # default 2*M + 10


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    summary: Tensor
    attention: AttentionState

    def select(self, index: np.ndarray) -> "DecoderState":
        pick = lambda t: F.take_rows(t, index, axis=0)
        return DecoderState(pick(self.h), pick(self.c), pick(self.summary), self.attention.select(index))


@dataclass
class Hypothesis:
    tokens: list[int]
    log_prob: float
    finished: bool = False
    truncated: bool = False


def default_max_steps(length: int) -> int:
    return 2 * int(length) + 10


class Decoder(Module):
    def __init__(self, alphabet: Alphabet, feature_dim: int, config: DecoderConfig,
                 attention: AttentionConfig, rng: np.random.Generator, dtype=np.float32):
        self.alphabet = alphabet
        self.config = config
        H = config.hidden_units
        self.embedding = Embedding(alphabet.embedding_size, config.embedding_dim, rng, dtype)
        self.attention = Attention(attention, H, feature_dim, rng, dtype)
        self.lstm = LSTM(config.embedding_dim + attention.summary_dim, H, rng, dtype=dtype)
        self.output = Dense(H + attention.summary_dim, alphabet.output_size, rng, dtype=dtype)
        self._out_mask = alphabet.output_mask()

    def prepare(self, features: Tensor, lengths) -> Memory:
        return self.attention.prepare(features, lengths)

    def initial_state(self, memory: Memory) -> DecoderState:
        B = memory.mask.shape[0]
        dt = memory.values.dtype
        zeros = Tensor(np.zeros((B, self.config.hidden_units), dtype=dt))
        attn = self.attention.initial_state(memory)
        return DecoderState(zeros, zeros, self.attention.initial_summary(memory, attn), attn)

    def decode_step(self, prev_tokens, state: DecoderState, memory: Memory, train: bool = False,
                    rng: np.random.Generator | None = None) -> tuple[Tensor, DecoderState]:
        """One step: returns the output distribution ``B x V`` and the new state."""
        prev_tokens = np.asarray(prev_tokens, dtype=np.int64)
        if prev_tokens.size and (prev_tokens.min() < 0 or prev_tokens.max() >= self.alphabet.embedding_size):
            raise IndexError("previous token outside the alphabet")
        x = concat([self.embedding(prev_tokens), state.summary], axis=-1)
        h, c = self.lstm.step(x, state.h, state.c)
        s = F.dropout(h, self.config.dropout, train, rng)
        ctx, attn = self.attention(s, memory, state.attention, train, rng)
        logits = self.output(concat([s, ctx.summary], axis=-1))
        dist = softmax(logits, axis=-1, mask=self._out_mask)
        return dist, DecoderState(h, c, ctx.summary, attn)

    def teacher_forced_unroll(self, memory: Memory, targets: np.ndarray, noise_prob: float = 0.1,
                              train: bool = True, rng: np.random.Generator | None = None,
                              record_weights: bool = False):
        """Unroll over ``targets`` (``B x (T+1)``, sos ... eos pad).

        Each step feeds the gold previous token, except that with probability
        ``noise_prob`` (per item, from step 2 on) a token sampled from the
        previous output distribution is fed instead. Returns the stacked
        distributions ``B x T x V`` (and the attention weights per step when
        ``record_weights``).
        """
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[1] < 2:
            raise ValueError("targets must hold sos plus at least one token")
        rng = rng if rng is not None else np.random.default_rng()
        B, T1 = targets.shape
        state = self.initial_state(memory)
        prev = targets[:, 0]
        dists, weights = [], []
        for t in range(1, T1):
            dist, state = self.decode_step(prev, state, memory, train, rng)
            dists.append(dist)
            if record_weights:
                weights.append(state.attention.prev_weights.data)
            prev = targets[:, t].copy()
            if noise_prob > 0.0 and t + 1 < T1:
                swap = rng.random(B) < noise_prob
                if swap.any():
                    prev[swap] = _sample_rows(dist.data[swap], rng)
        out = stack(dists, axis=1)
        return (out, weights) if record_weights else out

    def _max_steps(self, length: int) -> int:
        return self.config.max_decode_steps or default_max_steps(length)

    def greedy(self, features: Tensor, lengths) -> list[Hypothesis]:
        """Batched argmax decoding."""
        lengths = np.asarray(lengths)
        with no_grad():
            memory = self.prepare(features, lengths)
            state = self.initial_state(memory)
            B = len(lengths)
            prev = np.full(B, self.alphabet.sos_id)
            tokens: list[list[int]] = [[] for _ in range(B)]
            logp = np.zeros(B)
            done = np.zeros(B, dtype=bool)
            limits = np.array([self._max_steps(n) for n in lengths])
            for t in range(int(limits.max())):
                dist, state = self.decode_step(prev, state, memory)
                best = np.argmax(dist.data, axis=-1)
                for b in range(B):
                    if done[b]:
                        continue
                    logp[b] += np.log(max(float(dist.data[b, best[b]]), 1e-300))
                    if best[b] == self.alphabet.eos_id:
                        done[b] = True
                    else:
                        tokens[b].append(int(best[b]))
                        if len(tokens[b]) >= limits[b]:
                            done[b] = True
                prev = best
                if done.all():
                    break
        return [Hypothesis(tokens[b], float(logp[b]),
                           finished=len(tokens[b]) < limits[b], truncated=len(tokens[b]) >= limits[b])
                for b in range(B)]

    def beam_search(self, features: Tensor, lengths, beam_width: int | None = None) -> list[Hypothesis]:
        """Beam search per batch item; returns the best hypothesis of each."""
        width = beam_width or self.config.beam_width
        lengths = np.asarray(lengths)
        results = []
        with no_grad():
            memory_all = self.prepare(features, lengths)
            for b in range(len(lengths)):
                memory = memory_all.select(np.array([b]))
                init = self.initial_state(memory)

                def step(prev, state, k, memory=memory):
                    mem = memory.select(np.zeros(k, dtype=np.int64))
                    dist, new = self.decode_step(prev, state, mem)
                    with np.errstate(divide="ignore"):
                        return np.log(dist.data.astype(np.float64)), new

                results.append(beam_search(step, init, lambda st, idx: st.select(idx),
                                           self.alphabet.sos_id, self.alphabet.eos_id, width,
                                           self._max_steps(lengths[b])))
        return results


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = probs.astype(np.float64)
    p /= p.sum(axis=-1, keepdims=True)
    cum = np.cumsum(p, axis=-1)
    u = rng.random(len(p))[:, None]
    return np.minimum((u > cum).sum(axis=-1), p.shape[-1] - 1)


def beam_search(step: Callable, init_state, select: Callable, sos_id: int, eos_id: int,
                beam_width: int, max_steps: int, order_rng: np.random.Generator | None = None) -> Hypothesis:
    """Generic beam search.

    ``step(prev_tokens, state, k)`` returns log-probabilities ``k x V`` and the
    next batched state; ``select(state, index)`` gathers state rows.

    Each step keeps the ``beam_width`` best extensions; those ending in eos
    move to the finished pool and shrink the live beam. Search stops when no
    live hypothesis can beat the best finished one. ``order_rng`` shuffles the
    live hypotheses each step (checks that branching never leaks state).
    """
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    tokens: list[list[int]] = [[]]
    scores = np.zeros(1)
    state = init_state
    prev = np.array([sos_id])
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_steps):
        k = len(tokens)
        logp, state = step(prev, state, k)
        V = logp.shape[1]
        flat = (scores[:, None] + logp).reshape(-1)
        # stable sort: ties resolve to the earlier hypothesis, then lower token id
        order = np.argsort(-flat, kind="stable")[:beam_width]
        order = order[np.isfinite(flat[order])]
        rows, cols = np.divmod(order, V)
        live = cols != eos_id
        for r, sc in zip(rows[~live], flat[order[~live]]):
            finished.append((float(sc), tokens[r]))
        rows, cols = rows[live], cols[live]
        if rows.size == 0:
            break
        if order_rng is not None:
            perm = order_rng.permutation(len(rows))
            rows, cols = rows[perm], cols[perm]
        new_scores = flat[rows * V + cols]
        tokens = [tokens[r] + [int(c)] for r, c in zip(rows, cols)]
        scores = new_scores
        state = select(state, rows)
        prev = cols
        if finished and max(f[0] for f in finished) >= scores.max():
            break
    if not finished:
        i = int(np.argmax(scores))
        return Hypothesis(tokens[i], float(scores[i]), finished=False, truncated=True)
    best = max(range(len(finished)), key=lambda i: (finished[i][0], -i))
    return Hypothesis(list(finished[best][1]), finished[best][0], finished=True)
