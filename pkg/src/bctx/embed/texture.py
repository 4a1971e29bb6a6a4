"""Deterministic texture statistics over a fixed cell grid."""

import numpy as np

from ..image import IMAGE_SIDE, BytecodeImage

GRID = 10
CELL = IMAGE_SIDE // GRID
HIST_BINS = 16
TEXTURE_DIM = GRID * GRID * 3 * 2 + 3 * HIST_BINS  # 648


def embed_texture_grid(image: BytecodeImage) -> np.ndarray:
    """Per-cell channel mean/std plus per-channel 16-bin histograms.

    Layout: for each 30x30 cell in row-major order, for each of R, G, B,
    ``(mean, population std)`` of values scaled to [0, 1]; then three
    normalized histograms (R, G, B).
    """
    x = image.pixels.astype(np.float64) / 255.0
    cells = x.reshape(GRID, CELL, GRID, CELL, 3).transpose(0, 2, 4, 1, 3).reshape(GRID, GRID, 3, CELL * CELL)
    stats = np.stack([cells.mean(axis=-1), cells.std(axis=-1)], axis=-1)  # (10, 10, 3, 2)
    hist = np.stack([
        np.bincount(image.pixels[..., c].ravel() // (256 // HIST_BINS), minlength=HIST_BINS)
        for c in range(3)
    ]).astype(np.float64) / (IMAGE_SIDE * IMAGE_SIDE)
    return np.concatenate([stats.ravel(), hist.ravel()])
