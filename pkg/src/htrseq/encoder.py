"""CNN + BLSTM line encoder with an optional CTC-compatible output head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core.nn import BLSTM, Conv2d, Dense, Module
from .core.tensor import Tensor, leaky_relu

IMAGE_HEIGHT = 64


class InputContractError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str                 # "conv" | "pool"
    kernel: tuple[int, int]   # (ky, kx)
    stride: tuple[int, int]   # (sy, sx)
    filters: int = 0

    def __str__(self) -> str:
        tag = "C" if self.kind == "conv" else "P"
        depth = f"[{self.filters}]" if self.kind == "conv" else ""
        return f"{tag}{self.kernel[0]}x{self.kernel[1]}/{self.stride[0]}x{self.stride[1]}{depth}"


DEFAULT_STACK = (
    LayerSpec("conv", (6, 4), (4, 2), 8),
    LayerSpec("conv", (6, 4), (1, 1), 32),
    LayerSpec("pool", (4, 2), (4, 2)),
    LayerSpec("conv", (3, 3), (1, 1), 64),
    LayerSpec("pool", (1, 2), (1, 2)),
)


def parse_stack(text: str) -> tuple[LayerSpec, ...]:
    """Parse ``"C6x4/4x2[8] C6x4/1x1[32] P4x2/4x2 ..."``."""
    specs = []
    for tok in text.replace(",", " ").split():
        kind = {"C": "conv", "P": "pool"}[tok[0].upper()]
        body, _, depth = tok[1:].partition("[")
        k, s = body.split("/")
        ky, kx = (int(v) for v in k.split("x"))
        sy, sx = (int(v) for v in s.split("x"))
        filters = int(depth.rstrip("]")) if depth else 0
        specs.append(LayerSpec(kind, (ky, kx), (sy, sx), filters))
    return tuple(specs)


def format_stack(stack) -> str:
    return " ".join(str(s) for s in stack)


@dataclass
class EncoderConfig:
    conv_stack: tuple[LayerSpec, ...] = DEFAULT_STACK
    blstm_units: int = 256
    blstm_layers: int = 3
    output_channels: int | None = None   # None: alphabet + blank
    dropout: float = 0.5
    leaky_slope: float = 0.01

    def width_factor(self) -> int:
        f = 1
        for spec in self.conv_stack:
            f *= spec.stride[1]
        return f

    def height_factor(self) -> int:
        f = 1
        for spec in self.conv_stack:
            f *= spec.stride[0]
        return f

    def column_depth(self) -> int:
        depth = 1
        for spec in self.conv_stack:
            if spec.kind == "conv":
                depth = spec.filters
        return depth * (-(-IMAGE_HEIGHT // self.height_factor()))


@dataclass
class EncodedFeatures:
    features: Tensor          # B x M x o
    lengths: np.ndarray       # valid frames per item
    logit_compatible: bool

    @property
    def mask(self) -> np.ndarray:
        return F.sequence_mask(self.lengths, self.features.shape[1])


def output_lengths(widths, stack=DEFAULT_STACK) -> np.ndarray:
    w = np.asarray(widths, dtype=np.int64)
    for spec in stack:
        w = -(-w // spec.stride[1])
    return w


class Encoder(Module):
    def __init__(self, config: EncoderConfig, n_chars: int, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.n_chars = n_chars
        self.out_channels = config.output_channels or n_chars + 1
        self.logit_compatible = self.out_channels == n_chars + 1
        self.convs = []
        c_in = 1
        for spec in config.conv_stack:
            if spec.kind == "conv":
                self.convs.append(Conv2d(spec.kernel, spec.stride, c_in, spec.filters, rng, dtype))
                c_in = spec.filters
        n_in = config.column_depth()
        self.blstms = []
        for _ in range(config.blstm_layers):
            self.blstms.append(BLSTM(n_in, config.blstm_units, rng, dtype))
            n_in = config.blstm_units
        self.head = Dense(n_in, self.out_channels, rng, dtype=dtype)

    def __call__(self, images, widths, train: bool = False, rng: np.random.Generator | None = None) -> EncodedFeatures:
        return self.encode(images, widths, train, rng)

    def encode(self, images, widths, train: bool = False, rng: np.random.Generator | None = None) -> EncodedFeatures:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.head.weight.dtype))
        if x.ndim == 3:
            x = x.reshape(x.shape + (1,))
        if x.ndim != 4 or x.shape[1] != IMAGE_HEIGHT:
            raise InputContractError(f"expected B x {IMAGE_HEIGHT} x W x 1 images, got {x.shape}")
        B, _, W, _ = x.shape
        widths = np.asarray(widths, dtype=np.int64)
        if widths.shape != (B,) or (widths > W).any() or (widths < 1).any():
            raise InputContractError("widths must be positive and no larger than the image width")

        cur = widths
        x = x * _column_mask(cur, W, x.dtype)
        conv_iter = iter(self.convs)
        for spec in self.config.conv_stack:
            if spec.kind == "conv":
                x = leaky_relu(next(conv_iter)(x), self.config.leaky_slope)
            else:
                x = F.maxpool2d(x, spec.kernel, spec.stride, widths=cur)
            cur = -(-cur // spec.stride[1])
            x = x * _column_mask(cur, x.shape[2], x.dtype)

        # B x h x M x C -> B x M x (h*C)
        _, h, M, C = x.shape
        seq = x.transpose(0, 2, 1, 3).reshape(B, M, h * C)
        for blstm in self.blstms:
            seq = F.dropout(blstm(seq, cur), self.config.dropout, train, rng)
        out = self.head(seq) * F.sequence_mask(cur, M)[:, :, None].astype(seq.dtype)
        return EncodedFeatures(out, cur, self.logit_compatible)


def _column_mask(widths: np.ndarray, W: int, dtype) -> np.ndarray:
    return (np.arange(W)[None, :] < widths[:, None]).astype(dtype)[:, None, :, None]


def greedy_ctc_output(enc: EncodedFeatures) -> list[list[int]]:
    """Best-path CTC decoding: per-frame argmax, merge repeats, drop blanks."""
    if not enc.logit_compatible:
        raise ValueError("encoder output is not CTC compatible")
    blank = enc.features.shape[-1] - 1
    best = np.argmax(enc.features.data, axis=-1)
    return [collapse_ctc(best[b, :n], blank) for b, n in enumerate(enc.lengths)]


def collapse_ctc(frames, blank: int) -> list[int]:
    out = []
    prev = None
    for k in frames:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out
