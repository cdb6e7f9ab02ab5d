"""The full recognizer: encoder, attention decoder and their joint loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig
from .core.nn import Module
from .core.tensor import Tensor, no_grad
from .decoder import Alphabet, Decoder, DecoderConfig, Hypothesis
from .encoder import EncodedFeatures, Encoder, EncoderConfig, greedy_ctc_output
from .losses import ctc_batch_loss, cross_entropy, hybrid_loss


@dataclass
class LossParts:
    total: Tensor
    ctc: Tensor | None
    ce: Tensor | None
    skipped: list[int]


class Seq2Seq(Module):
    def __init__(self, alphabet: Alphabet, encoder: EncoderConfig, attention: AttentionConfig,
                 decoder: DecoderConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.alphabet = alphabet
        self.encoder = Encoder(encoder, len(alphabet), rng, dtype)
        self.decoder = Decoder(alphabet, self.encoder.out_channels, decoder, attention, rng, dtype)
        self.assign_names()

    @property
    def has_ctc_head(self) -> bool:
        return self.encoder.logit_compatible

    def encode(self, images, widths, train=False, rng=None) -> EncodedFeatures:
        return self.encoder.encode(images, widths, train, rng)

    def losses(self, images, widths, targets, target_lengths, lam: float, train: bool = True,
               noise_prob: float = 0.1, rng: np.random.Generator | None = None,
               encoder_train: bool | None = None) -> LossParts:
        """Hybrid loss for a padded batch.

        ``targets`` is ``B x (T+1)`` (sos ... eos pad), ``target_lengths``
        counts tokens after sos (eos included). CTC is only evaluated when
        ``lam > 0``.
        """
        enc_train = train if encoder_train is None else encoder_train
        enc = self.encode(images, widths, enc_train, rng)
        targets = np.asarray(targets, dtype=np.int64)
        target_lengths = np.asarray(target_lengths)
        l_ctc, skipped = None, []
        if lam > 0.0:
            labels = [list(targets[b, 1:target_lengths[b]]) for b in range(len(targets))]
            l_ctc, skipped = ctc_batch_loss(enc.features, enc.lengths, labels)
        l_ce = None
        if lam < 1.0:
            memory = self.decoder.prepare(enc.features, enc.lengths)
            dists = self.decoder.teacher_forced_unroll(memory, targets, noise_prob, train, rng)
            T = targets.shape[1] - 1
            mask = np.arange(T)[None, :] < target_lengths[:, None]
            l_ce = cross_entropy(dists, targets[:, 1:], mask)
        return LossParts(hybrid_loss(l_ctc, l_ce, lam), l_ctc, l_ce, skipped)

    def decode(self, enc: EncodedFeatures, beam_width: int = 16) -> list[Hypothesis]:
        with no_grad():
            if beam_width <= 1:
                return self.decoder.greedy(enc.features, enc.lengths)
            return self.decoder.beam_search(enc.features, enc.lengths, beam_width)

    def recognize(self, images, widths, beam_width: int = 16) -> list[Hypothesis]:
        with no_grad():
            return self.decode(self.encode(images, widths), beam_width)

    def ctc_transcribe(self, images, widths) -> list[list[int]]:
        with no_grad():
            return greedy_ctc_output(self.encode(images, widths))
