"""Experiment configuration and its INI file form.

Sections mirror the model parts::

    [experiment]   regime, seed, train_data, val_data, pretrained, output
    [encoder]      conv_stack, blstm_units, blstm_layers, output_channels, dropout
    [attention]    mechanism, score_form, score_style, attention_dim, chunk_window,
                   location_kernel, location_filters, positional_encoding, ...
    [decoder]      hidden_units, embedding_dim, dropout, beam_width, max_decode_steps
    [loss]         lambda
    [training]     epochs, epoch_size, batch_size, lr, decay_epochs, clip_norm,
                   teacher_noise, augment, val_beam_width

Keys accept ``-`` or ``_``. Unknown keys are an error.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .attention import AttentionConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig, format_stack, parse_stack
from .losses import LossConfig

REGIMES = ("hybrid", "fixed-encoder", "ce-scratch", "ce-pretrained", "ctc")


@dataclass
class TrainingConfig:
    epochs: int = 200
    epoch_size: int = 8192
    batch_size: int = 16
    lr: float = 1e-3
    decay_epochs: int = 50
    clip_norm: float | None = 4.0
    teacher_noise: float = 0.1
    augment: bool = True
    val_beam_width: int = 1


@dataclass
class ExperimentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    regime: str = "hybrid"
    seed: int = 0
    train_data: str | None = None
    val_data: str | None = None
    pretrained: str | None = None
    output: str | None = None

    def effective_lambda(self) -> float:
        return {"hybrid": self.loss.lam, "ctc": 1.0}.get(self.regime, 0.0)

    def validate(self, n_chars: int | None = None) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.regime in ("fixed-encoder", "ce-pretrained") and not self.pretrained:
            raise ValueError(f"regime {self.regime} needs a pretrained checkpoint")
        ctc_ok = self.encoder.output_channels is None or (
            n_chars is not None and self.encoder.output_channels == n_chars + 1)
        self.loss.ctc_enabled = ctc_ok
        if self.regime in ("hybrid", "ctc") and not ctc_ok:
            raise ValueError(f"regime {self.regime} needs a CTC-compatible encoder head")
        LossConfig(self.effective_lambda(), ctc_ok).validate()
        self.attention.validate()
        if self.decoder.beam_width < 1:
            raise ValueError("beam width must be >= 1")


_SECTIONS = {
    "encoder": "encoder",
    "attention": "attention",
    "decoder": "decoder",
    "loss": "loss",
    "training": "training",
}
_EXPERIMENT_KEYS = ("regime", "seed", "train_data", "val_data", "pretrained", "output")


_OPTIONAL = ("output_channels", "max_decode_steps", "clip_norm")


def _coerce(value: str, default, name: str):
    text = value.strip()
    if name == "conv_stack":
        return parse_stack(text)
    if text.lower() in ("none", "") and (default is None or name in _OPTIONAL):
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(default, int) or name in ("output_channels", "max_decode_steps"):
        return int(text)
    if isinstance(default, float) or name == "clip_norm":
        return float(text)
    return text


def _key(name: str) -> str:
    name = name.strip().replace("-", "_")
    return "lam" if name == "lambda" else name


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section == "experiment":
            for raw, value in parser.items(section):
                key = _key(raw)
                if key not in _EXPERIMENT_KEYS:
                    raise ValueError(f"unknown key [experiment] {raw}")
                setattr(cfg, key, _coerce(value, getattr(cfg, key) if key != "seed" else 0, key))
            continue
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        target = getattr(cfg, _SECTIONS[section])
        names = {f.name for f in dataclasses.fields(target)}
        for raw, value in parser.items(section):
            key = _key(raw)
            if key not in names:
                raise ValueError(f"unknown key [{section}] {raw}")
            setattr(target, key, _coerce(value, getattr(target, key), key))
    return cfg


def config_to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["experiment"] = {k: "none" if getattr(cfg, k) is None else str(getattr(cfg, k))
                            for k in _EXPERIMENT_KEYS}
    for section, attr in _SECTIONS.items():
        obj = getattr(cfg, attr)
        out = {}
        for f in dataclasses.fields(obj):
            if attr == "loss" and f.name == "ctc_enabled":
                continue
            v = getattr(obj, f.name)
            key = "lambda" if f.name == "lam" else f.name
            out[key] = format_stack(v) if f.name == "conv_stack" else ("none" if v is None else str(v))
        parser[section] = out
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["encoder"]["conv_stack"] = format_stack(cfg.encoder.conv_stack)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    exp = {k: "none" if d.get(k) is None else str(d[k]) for k in _EXPERIMENT_KEYS if k in d}
    parser["experiment"] = exp
    for section in _SECTIONS:
        items = dict(d.get(section, {}))
        items.pop("ctc_enabled", None)
        if "lam" in items:
            items["lambda"] = items.pop("lam")
        parser[section] = {k: "none" if v is None else str(v) for k, v in items.items()}
    return config_from_parser(parser)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(config_to_ini(cfg), encoding="utf-8")
