"""Contrast normalization, height scaling and augmentation of line images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .sample import LineSample

TARGET_HEIGHT = 64


def normalize_contrast(img: np.ndarray, low: float = 5.0, high: float = 95.0) -> np.ndarray:
    """Map the ``low``/``high`` intensity percentiles to 0/1 and clamp.

    Images whose background is bright (median above mid-range) are inverted
    first so ink ends up as 1. When the percentiles coincide the full range is
    used instead; a constant image becomes all background.
    """
    img = np.asarray(img, dtype=np.float64)
    lo_v, hi_v = float(img.min()), float(img.max())
    if hi_v - lo_v < 1e-12:
        return np.zeros_like(img)
    if np.median(img) > (lo_v + hi_v) / 2.0:
        img = hi_v + lo_v - img
    p_lo, p_hi = np.percentile(img, [low, high])
    if p_hi - p_lo < 1e-12:
        p_lo, p_hi = lo_v, hi_v
    return np.clip((img - p_lo) / (p_hi - p_lo), 0.0, 1.0)


def scale_to_height(img: np.ndarray, height: int = TARGET_HEIGHT) -> np.ndarray:
    h, w = img.shape
    if h == height:
        return img
    new_w = max(1, int(round(w * height / h)))
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(new_w) + 0.5) * w / new_w - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def preprocess(raw, transcript: str = "", source_id: str = "") -> LineSample:
    img = np.asarray(raw)
    if img.ndim == 3:
        img = img[..., :3].mean(axis=-1)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty grayscale image, got shape {img.shape}")
    out = scale_to_height(normalize_contrast(img))
    return LineSample(np.clip(out, 0.0, 1.0).astype(np.float32), transcript, source_id)


def dilate(img: np.ndarray, size: int = 3) -> np.ndarray:
    return ndimage.grey_dilation(img, size=(size, size), mode="constant", cval=0.0)


def erode(img: np.ndarray, size: int = 3) -> np.ndarray:
    return ndimage.grey_erosion(img, size=(size, size), mode="constant", cval=0.0)


def grid_distort(img: np.ndarray, rng: np.random.Generator, spacing: int = 32, sigma: float = 2.0) -> np.ndarray:
    """Jitter control points every ``spacing`` pixels and warp bilinearly."""
    h, w = img.shape
    ny = h // spacing + 2
    nx = w // spacing + 2
    dy = rng.normal(0.0, sigma, size=(ny, nx))
    dx = rng.normal(0.0, sigma, size=(ny, nx))
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = yy / spacing, xx / spacing
    off_y = ndimage.map_coordinates(dy, [cy, cx], order=1, mode="nearest")
    off_x = ndimage.map_coordinates(dx, [cy, cx], order=1, mode="nearest")
    return ndimage.map_coordinates(img, [yy + off_y, xx + off_x], order=1, mode="constant", cval=0.0)


def augment(sample: LineSample, seed, prob: float = 0.5) -> LineSample:
    """Apply dilation, erosion and grid distortion, each with probability ``prob``."""
    rng = np.random.default_rng(seed)
    use = rng.random(3) < prob
    img = sample.image
    if use[0]:
        img = dilate(img)
    if use[1]:
        img = erode(img)
    if use[2]:
        img = grid_distort(img, rng)
    img = np.clip(img, 0.0, 1.0).astype(np.float32, copy=not use.any())
    return LineSample(img, sample.transcript, sample.source_id)
