"""On-disk datasets: PNG line images plus a ``lines.tsv`` index.

Index columns are ``id``, ``relative-path`` and ``transcript``, UTF-8, one
line per sample, no header.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .image import preprocess
from .sample import LineSample

INDEX_NAME = "lines.tsv"


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_dataset(root, samples: Sequence[LineSample]) -> Path:
    """Write images dark-on-white, as scanned pages are stored."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        sid = s.source_id or f"line-{i:05d}"
        if any(c in s.transcript for c in "\t\n\r"):
            raise ValueError(f"transcript of {sid} contains a tab or newline")
        rel = f"images/{sid}.png"
        pixels = np.round((1.0 - np.clip(s.image, 0.0, 1.0)) * 255.0).astype(np.uint8)
        Image.fromarray(pixels).save(root / rel)
        rows.append(f"{sid}\t{rel}\t{s.transcript}\n")
    index = root / INDEX_NAME
    index.write_text("".join(rows), encoding="utf-8")
    return index


def read_index(root) -> list[tuple[str, str, str]]:
    root = Path(root)
    rows = []
    for n, line in enumerate((root / INDEX_NAME).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{root / INDEX_NAME}:{n}: expected 3 tab-separated columns")
        rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(root) -> list[LineSample]:
    root = Path(root)
    return [preprocess(read_image(root / rel), text, sid) for sid, rel, text in read_index(root)]
