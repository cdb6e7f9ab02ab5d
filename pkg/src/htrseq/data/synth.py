"""Deterministic synthetic handwriting-like line images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .glyphs import CHARSET, GLYPH_HEIGHT, GLYPH_WIDTH, GLYPHS
from .sample import LineSample

LINE_HEIGHT = 64


@dataclass(frozen=True)
class FontSpec:
    scale: int = 4              # pixels per glyph cell
    spacing: int = 4            # nominal gap between glyphs
    spacing_jitter: float = 2.0
    baseline_jitter: float = 2.0
    shear: float = 0.2          # max |shear| per glyph
    size_jitter: float = 0.08   # max relative scale change per glyph
    blur: float = 0.6
    margin: int = 6


def undrawable(text: str) -> list[str]:
    return sorted({c for c in text if c not in GLYPHS})


def _perturb(cell: np.ndarray, rng: np.random.Generator, spec: FontSpec) -> np.ndarray:
    shear = rng.uniform(-spec.shear, spec.shear)
    zoom = 1.0 + rng.uniform(-spec.size_jitter, spec.size_jitter)
    h, w = cell.shape
    pad = spec.scale * 2
    src = np.pad(cell, pad)
    cy, cx = (np.array(src.shape) - 1) / 2.0
    # output -> input coordinates: inverse of (scale then shear x by y)
    mat = np.array([[1.0 / zoom, 0.0], [-shear / zoom, 1.0 / zoom]])
    offset = np.array([cy, cx]) - mat @ np.array([cy, cx])
    out = ndimage.affine_transform(src, mat, offset=offset, order=1, mode="constant")
    return out[pad // 2: pad // 2 + h + pad, :]


def synth_line(text: str, font: FontSpec | None = None, seed: int = 0, source_id: str = "") -> LineSample:
    """Render ``text`` left to right with jittered baseline, spacing and
    per-glyph shear/size; identical ``(text, seed)`` gives identical pixels."""
    font = font or FontSpec()
    if not text:
        raise ValueError("cannot render an empty line")
    bad = undrawable(text)
    if bad:
        raise ValueError(f"no glyph for characters {bad}")
    rng = np.random.default_rng(seed)
    gh, gw = GLYPH_HEIGHT * font.scale, GLYPH_WIDTH * font.scale
    pieces = []
    x = float(font.margin)
    for ch in text:
        cell = np.kron(GLYPHS[ch], np.ones((font.scale, font.scale)))
        patch = _perturb(cell, rng, font)
        top = (LINE_HEIGHT - gh) / 2.0 - font.scale + rng.normal(0.0, font.baseline_jitter / 2.0)
        pieces.append((patch, int(round(top)), int(round(x))))
        advance = gw + font.spacing + rng.uniform(-font.spacing_jitter, font.spacing_jitter)
        x += max(advance, gw * 0.75)
    width = int(np.ceil(x)) + font.margin
    canvas = np.zeros((LINE_HEIGHT, width))
    for patch, top, left in pieces:
        ph, pw = patch.shape
        left -= font.scale * 2
        y0, x0 = max(top, 0), max(left, 0)
        y1, x1 = min(top + ph, LINE_HEIGHT), min(left + pw, width)
        canvas[y0:y1, x0:x1] = np.maximum(canvas[y0:y1, x0:x1], patch[y0 - top:y1 - top, x0 - left:x1 - left])
    if font.blur > 0:
        canvas = ndimage.gaussian_filter(canvas, font.blur)
    canvas = np.clip(canvas / max(canvas.max(), 1e-6), 0.0, 1.0)
    return LineSample(canvas.astype(np.float32), text, source_id)


def random_texts(n: int, charset: str, seed: int, min_len: int = 3, max_len: int = 8) -> list[str]:
    """Random lines over ``charset``; spaces never lead, trail or repeat."""
    rng = np.random.default_rng(seed)
    letters = [c for c in charset if c != " "]
    texts = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        chars = []
        for i in range(k):
            if " " in charset and 0 < i < k - 1 and chars[-1] != " " and rng.random() < 0.15:
                chars.append(" ")
            else:
                chars.append(letters[int(rng.integers(len(letters)))])
        texts.append("".join(chars))
    return texts


def synth_corpus(n: int, charset: str = "abcdehilmnorstu ", seed: int = 0, font: FontSpec | None = None,
                 min_len: int = 3, max_len: int = 8) -> list[LineSample]:
    missing = [c for c in charset if c not in CHARSET]
    if missing:
        raise ValueError(f"charset has undrawable characters {missing}")
    texts = random_texts(n, charset, seed, min_len, max_len)
    return [synth_line(t, font, seed * 100003 + i, f"synth-{i:05d}") for i, t in enumerate(texts)]
