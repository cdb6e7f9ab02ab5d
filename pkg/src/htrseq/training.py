"""Training loop, evaluation and recognition."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from PIL import Image

from .checkpoint import load_checkpoint, load_encoder_weights, save_checkpoint
from .config import ExperimentConfig, save_config
from .core.optim import AdamState, adam_step, clip_parameter_grads
from .core.tensor import no_grad
from .data.batching import Batch, fixed_batches, make_batches
from .data.image import preprocess
from .data.io import read_image
from .data.sample import LineSample
from .decoder import Alphabet
from .encoder import greedy_ctc_output
from .metrics import EvalReport, corpus_cer
from .model import Seq2Seq

logger = logging.getLogger(__name__)

EPOCH_LOG_COLUMNS = ("epoch", "lr", "loss", "ctc", "ce", "val_encoder_cer", "val_decoder_cer", "seconds")
STEP_LOG_COLUMNS = ("epoch", "step", "loss", "ctc", "ce", "grad_norm")


class TrainingDiverged(RuntimeError):
    pass


def lr_schedule(epoch: int, epochs: int = 200, base: float = 1e-3, decay_epochs: int = 50) -> float:
    """Constant ``base`` then a half-cosine to zero over the last ``decay_epochs``."""
    if not 1 <= epoch <= epochs:
        raise ValueError(f"epoch {epoch} outside 1..{epochs}")
    start = epochs - decay_epochs
    if epoch <= start or decay_epochs <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - start) / decay_epochs))


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    ctc: float | None
    ce: float | None
    grad_norm: float


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    ctc: float | None
    ce: float | None
    val_encoder_cer: float | None
    val_decoder_cer: float | None
    seconds: float


@dataclass
class TrainResult:
    model: Seq2Seq
    adam: AdamState
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_tsv(path, columns, records) -> None:
    lines = ["\t".join(columns) + "\n"]
    lines += ["\t".join(_fmt(getattr(r, c)) for c in columns) + "\n" for r in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def check_alphabet(alphabet: Alphabet, samples: Sequence[LineSample]) -> None:
    known = set(alphabet.characters)
    missing = sorted({c for s in samples for c in s.transcript} - known)
    if missing:
        raise ValueError(f"dataset characters missing from the model alphabet: {missing}")


def build_model(config: ExperimentConfig, alphabet: Alphabet) -> Seq2Seq:
    config.validate(len(alphabet))
    model = Seq2Seq(alphabet, config.encoder, config.attention, config.decoder, seed=config.seed)
    if config.regime in ("fixed-encoder", "ce-pretrained"):
        load_encoder_weights(model, config.pretrained)
    if config.regime == "fixed-encoder":
        model.encoder.set_trainable(False)
    if config.regime == "ctc":
        model.decoder.set_trainable(False)
    return model


def train(config: ExperimentConfig, train_samples: Sequence[LineSample],
          val_samples: Sequence[LineSample] | None = None, out_dir=None,
          alphabet: Alphabet | None = None, model: Seq2Seq | None = None) -> TrainResult:
    """Run ``config.training.epochs`` epochs of the configured regime.

    Writes ``config.ini``, ``initial.npz``, ``checkpoint.npz`` (after every
    epoch), ``epochs.tsv`` and ``steps.tsv`` into ``out_dir`` when given.
    """
    tc = config.training
    alphabet = alphabet or Alphabet.from_texts([s.transcript for s in train_samples])
    check_alphabet(alphabet, train_samples)
    if model is None:
        model = build_model(config, alphabet)
    lam = config.effective_lambda()
    params = model.parameters()
    adam = AdamState(lr=tc.lr)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_config(config, out / "config.ini")
        save_checkpoint(out / "initial.npz", model, config, adam, epoch=0)
    encoder_train = config.regime != "fixed-encoder"
    result = TrainResult(model, adam)

    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, tc.epochs, tc.lr, tc.decay_epochs)
        rng = np.random.default_rng([config.seed, epoch])
        batches = make_batches(train_samples, alphabet, tc.batch_size, tc.epoch_size,
                               seed=int(rng.integers(2**63 - 1)), augment=tc.augment)
        sums = {"loss": 0.0, "ctc": 0.0, "ce": 0.0}
        n = 0
        for step, batch in enumerate(batches, 1):
            rec = train_step(model, batch, lam, adam, lr, tc.clip_norm, tc.teacher_noise, rng, encoder_train,
                             params)
            rec.epoch, rec.step = epoch, step
            if not math.isfinite(rec.loss):
                if out is not None:
                    (out / "nan_batch.txt").write_text("\n".join(batch.ids) + "\n", encoding="utf-8")
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}; batch ids {batch.ids}")
            result.steps.append(rec)
            sums["loss"] += rec.loss
            sums["ctc"] += rec.ctc or 0.0
            sums["ce"] += rec.ce or 0.0
            n += 1
        val_enc = val_dec = None
        if val_samples:
            dec_rep, enc_rep = evaluate(model, val_samples, beam_width=tc.val_beam_width)
            val_dec = dec_rep.cer if dec_rep is not None else None
            val_enc = enc_rep.cer if enc_rep is not None else None
        record = EpochRecord(epoch, lr, sums["loss"] / n,
                             sums["ctc"] / n if lam > 0 else None,
                             sums["ce"] / n if lam < 1 else None,
                             val_enc, val_dec, time.perf_counter() - t0)
        result.epochs.append(record)
        logger.info("epoch %d lr %.2e loss %.4f val enc %s dec %s (%.1fs)", epoch, lr, record.loss,
                    val_enc, val_dec, record.seconds)
        if out is not None:
            save_checkpoint(out / "checkpoint.npz", model, config, adam, epoch=epoch)
            write_tsv(out / "epochs.tsv", EPOCH_LOG_COLUMNS, result.epochs)
            write_tsv(out / "steps.tsv", STEP_LOG_COLUMNS, result.steps)
    return result


def train_step(model: Seq2Seq, batch: Batch, lam: float, adam: AdamState, lr: float, clip_norm: float | None,
               noise: float, rng: np.random.Generator, encoder_train: bool = True, params=None) -> StepRecord:
    params = params if params is not None else model.parameters()
    model.zero_grad()
    parts = model.losses(batch.images, batch.widths, batch.targets, batch.target_lengths, lam,
                         train=True, noise_prob=noise, rng=rng, encoder_train=encoder_train)
    loss = parts.total.item()
    rec = StepRecord(0, 0, loss,
                     parts.ctc.item() if parts.ctc is not None else None,
                     parts.ce.item() if parts.ce is not None else None, 0.0)
    if not math.isfinite(loss):
        return rec
    parts.total.backward(params)
    if clip_norm:
        rec.grad_norm = clip_parameter_grads(params, clip_norm)
    adam_step(params, adam, lr)
    return rec


def evaluate(model: Seq2Seq, samples: Sequence[LineSample], beam_width: int = 16,
             batch_size: int = 16) -> tuple[EvalReport, EvalReport | None]:
    """Decoder CER (beam search, greedy when ``beam_width`` is 1) and, when the
    encoder has a CTC head, greedy-CTC encoder CER."""
    check_alphabet(model.alphabet, samples)
    alphabet = model.alphabet
    ids, refs, dec_hyps, enc_hyps = [], [], [], []
    for batch in fixed_batches(samples, alphabet, batch_size):
        with no_grad():
            enc = model.encode(batch.images, batch.widths)
            hyps = model.decode(enc, beam_width)
        dec_hyps += [alphabet.decode(h.tokens) for h in hyps]
        if model.has_ctc_head:
            enc_hyps += [alphabet.decode(t) for t in greedy_ctc_output(enc)]
        ids += batch.ids
        refs += batch.transcripts
    dec_report = corpus_cer(zip(dec_hyps, refs), ids)
    enc_report = corpus_cer(zip(enc_hyps, refs), ids) if model.has_ctc_head else None
    return dec_report, enc_report


def evaluate_checkpoint(path, samples: Sequence[LineSample], beam_width: int = 16):
    return evaluate(load_checkpoint(path).model, samples, beam_width)


@dataclass
class Recognition:
    path: str
    text: str | None
    error: str | None = None
    attention: np.ndarray | None = None  # M x T


def attention_matrix(model: Seq2Seq, sample: LineSample, tokens: Sequence[int]) -> np.ndarray:
    """Attention weights (``M x T``) of the decoder while emitting ``tokens`` then eos."""
    a = model.alphabet
    images = sample.image[None, :, :, None].astype(np.float32)
    widths = np.array([sample.image.shape[1]])
    targets = np.array([[a.sos_id, *tokens, a.eos_id]])
    with no_grad():
        enc = model.encode(images, widths)
        memory = model.decoder.prepare(enc.features, enc.lengths)
        _, weights = model.decoder.teacher_forced_unroll(memory, targets, 0.0, False, record_weights=True)
    M = int(enc.lengths[0])
    return np.stack([w[0, :M] for w in weights], axis=1).astype(np.float64)


def write_attention(stem: Path, matrix: np.ndarray) -> None:
    np.savetxt(stem.with_name(stem.name + ".attn.csv"), matrix, delimiter=",", fmt="%.6g")
    peak = matrix.max() if matrix.size else 0.0
    pixels = np.zeros(matrix.shape, np.uint8) if peak <= 0 else np.round(255.0 * matrix / peak).astype(np.uint8)
    Image.fromarray(pixels).save(stem.with_name(stem.name + ".attn.pgm"))


def recognize(model: Seq2Seq, paths: Sequence, beam_width: int = 16, dump_dir=None) -> list[Recognition]:
    """Transcribe line images one by one. A file that cannot be read or
    preprocessed yields a record with ``error`` set; the rest still run."""
    results = []
    for path in paths:
        path = Path(path)
        try:
            sample = preprocess(read_image(path), "", path.stem)
        except Exception as exc:  # noqa: BLE001 - reported per file
            results.append(Recognition(str(path), None, f"{type(exc).__name__}: {exc}"))
            continue
        hyp = model.recognize(sample.image[None, :, :, None].astype(np.float32),
                              np.array([sample.image.shape[1]]), beam_width)[0]
        rec = Recognition(str(path), model.alphabet.decode(hyp.tokens))
        if dump_dir is not None:
            rec.attention = attention_matrix(model, sample, hyp.tokens)
            out = Path(dump_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_attention(out / path.stem, rec.attention)
        results.append(rec)
    return results
