from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LineSample:
    """A text-line image (ink = 1, background = 0) with its transcript."""

    image: np.ndarray
    transcript: str
    source_id: str = ""

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]
