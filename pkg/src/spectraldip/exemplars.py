"""Procedural test images: a coarse-grained and a fine-grained exemplar.

Both are grayscale, 128x128, quantized to 8 bits and fully determined by
their seeds, so experiments on them are reproducible without any dataset.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

EXEMPLAR_SIZE = 128
COARSE_SEED = 11
FINE_SEED = 23
# small labeled image set for the width classifier
SAMPLE_MANIFEST = Path(__file__).parent / "data" / "sample" / "manifest.csv"


def _quantize8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def coarse_image(size: int = EXEMPLAR_SIZE, seed: int = COARSE_SEED) -> np.ndarray:
    """Smooth diagonal gradient with a handful of soft-edged blobs, shape (1, size, size)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.25 + 0.35 * (0.6 * xx + 0.4 * yy)
    for _ in range(7):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        radius = rng.uniform(0.08, 0.2)
        amp = rng.uniform(-0.3, 0.3)
        d = np.hypot(yy - cy, xx - cx) / radius
        img += amp / (1.0 + np.exp((d - 1.0) * 8.0))
    return _quantize8(img)[None]


def fine_image(size: int = EXEMPLAR_SIZE, seed: int = FINE_SEED, patches: int = 9,
               periods: tuple[float, float] = (4.0, 8.0)) -> np.ndarray:
    """Mosaic of oriented gratings, shape (1, size, size).

    Each cell of a random Voronoi partition carries its own grating and mean
    level, so the image mixes periodic detail with sharp region edges. Periods
    are drawn from ``periods`` (pixels); the defaults give the fine exemplar.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centers = rng.uniform(0, size, size=(patches, 2))
    dist = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
    label = np.argmin(dist, axis=-1)
    img = np.zeros((size, size))
    for k in range(patches):
        period = rng.uniform(*periods)
        theta = rng.uniform(0, np.pi)
        u = np.cos(theta) * xx + np.sin(theta) * yy
        grating = rng.uniform(0.3, 0.5) + rng.uniform(0.12, 0.25) * np.sin(2 * np.pi * u / period + rng.uniform(0, 2 * np.pi))
        img[label == k] = grating[label == k]
    return _quantize8(img)[None]


EXEMPLARS = {"coarse": coarse_image, "fine": fine_image}


def exemplar(name: str) -> np.ndarray:
    try:
        return EXEMPLARS[name]()
    except KeyError:
        raise ValueError(f"unknown exemplar {name!r}; choose from {sorted(EXEMPLARS)}") from None
