"""Epoch sampling, width bucketing and padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..decoder import Alphabet
from .image import augment as augment_sample
from .sample import LineSample

BUCKET_WIDTH = 64


@dataclass
class Batch:
    images: np.ndarray          # B x 64 x W_max x 1, padding = 0
    widths: np.ndarray
    targets: np.ndarray         # B x (T+1): sos ... eos pad
    target_lengths: np.ndarray  # tokens after sos, eos included
    ids: list[str]
    transcripts: list[str]

    def __len__(self) -> int:
        return len(self.widths)


def collate(samples: Sequence[LineSample], alphabet: Alphabet) -> Batch:
    B = len(samples)
    height = samples[0].image.shape[0]
    widths = np.array([s.image.shape[1] for s in samples], dtype=np.int64)
    images = np.zeros((B, height, int(widths.max()), 1), dtype=np.float32)
    seqs = [alphabet.decoder_target(s.transcript) for s in samples]
    T1 = max(len(q) for q in seqs)
    targets = np.full((B, T1), alphabet.pad_id, dtype=np.int64)
    for b, (s, q) in enumerate(zip(samples, seqs)):
        images[b, :, :widths[b], 0] = s.image
        targets[b, :len(q)] = q
    lengths = np.array([len(q) - 1 for q in seqs], dtype=np.int64)
    return Batch(images, widths, targets, lengths, [s.source_id for s in samples],
                 [s.transcript for s in samples])


def epoch_order(widths: np.ndarray, epoch_size: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw ``epoch_size`` indices with replacement, group by width bucket and
    cut into batches; batch order is shuffled."""
    draw = rng.integers(0, len(widths), size=epoch_size)
    bucket = widths[draw] // BUCKET_WIDTH
    order = draw[np.lexsort((rng.random(epoch_size), bucket))]
    batches = [order[i:i + batch_size] for i in range(0, epoch_size, batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def make_batches(samples: Sequence[LineSample], alphabet: Alphabet, batch_size: int = 16,
                 epoch_size: int = 8192, seed: int = 0, augment: bool = True) -> Iterator[Batch]:
    """Yield ``ceil(epoch_size / batch_size)`` augmented, padded batches."""
    if not samples:
        raise ValueError("no samples to batch")
    rng = np.random.default_rng(seed)
    widths = np.array([s.image.shape[1] for s in samples])
    for idx in epoch_order(widths, epoch_size, batch_size, rng):
        chosen = [samples[i] for i in idx]
        if augment:
            seeds = rng.integers(0, 2**63 - 1, size=len(chosen))
            chosen = [augment_sample(s, int(sd)) for s, sd in zip(chosen, seeds)]
        yield collate(chosen, alphabet)


def fixed_batches(samples: Sequence[LineSample], alphabet: Alphabet, batch_size: int = 16) -> Iterator[Batch]:
    """Deterministic, unaugmented batches in width order (evaluation)."""
    order = sorted(range(len(samples)), key=lambda i: (samples[i].image.shape[1], i))
    for i in range(0, len(order), batch_size):
        yield collate([samples[j] for j in order[i:i + batch_size]], alphabet)
