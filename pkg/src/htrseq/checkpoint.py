"""Checkpoint files.

A checkpoint is an uncompressed NumPy ``.npz`` archive holding:

``__meta__``
    UTF-8 JSON as a ``uint8`` array: ``format_version``, ``alphabet`` (list of
    characters), ``config`` (experiment config), ``adam`` (step, lr, betas,
    eps), ``epoch``.
``param/<name>``
    each parameter as a little-endian float array of its shape.
``adam_m/<name>``, ``adam_v/<name>``
    ADAM moment buffers for parameters that have them.

Values are stored without conversion beyond byte order, so a save/load round
trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict, config_to_dict
from .core.optim import AdamState
from .decoder import Alphabet
from .model import Seq2Seq

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: Seq2Seq
    config: ExperimentConfig
    adam: AdamState
    epoch: int


def _le(a: np.ndarray) -> np.ndarray:
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(path, model: Seq2Seq, config: ExperimentConfig, adam: AdamState | None = None,
                    epoch: int = 0) -> None:
    adam = adam or AdamState(lr=config.training.lr)
    meta = {
        "format_version": FORMAT_VERSION,
        "alphabet": model.alphabet.characters,
        "config": config_to_dict(config),
        "adam": {"step": adam.step, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "epoch": epoch,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = _le(p.data)
        if name in adam.m:
            arrays[f"adam_m/{name}"] = _le(adam.m[name])
            arrays[f"adam_v/{name}"] = _le(adam.v[name])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def read_meta(path) -> dict:
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    return meta


def load_checkpoint(path) -> Checkpoint:
    meta = read_meta(path)
    config = config_from_dict(meta["config"])
    alphabet = Alphabet(meta["alphabet"])
    model = Seq2Seq(alphabet, config.encoder, config.attention, config.decoder, seed=config.seed)
    a = meta["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    with np.load(path) as z:
        params = dict(model.named_parameters())
        stored = {k[len("param/"):] for k in z.files if k.startswith("param/")}
        if stored != set(params):
            raise ValueError(f"checkpoint parameters do not match the model: "
                             f"{sorted(stored ^ set(params))[:5]}")
        for name, p in params.items():
            arr = z[f"param/{name}"]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(arr.dtype.newbyteorder("="))
            if f"adam_m/{name}" in z.files:
                adam.m[name] = z[f"adam_m/{name}"].astype(p.data.dtype)
                adam.v[name] = z[f"adam_v/{name}"].astype(p.data.dtype)
    return Checkpoint(model, config, adam, int(meta.get("epoch", 0)))


def load_encoder_weights(model: Seq2Seq, path) -> None:
    """Copy ``encoder/*`` parameters from a checkpoint into ``model``."""
    meta = read_meta(path)
    if Alphabet(meta["alphabet"]) != model.alphabet:
        raise ValueError("pretrained checkpoint uses a different alphabet")
    with np.load(path) as z:
        for name, p in model.named_parameters():
            if not name.startswith("encoder/"):
                continue
            key = f"param/{name}"
            if key not in z.files:
                raise ValueError(f"pretrained checkpoint lacks {name}")
            arr = z[key]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.data.dtype)
