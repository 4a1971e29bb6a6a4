"""Bytecode-as-image conversion.

Three consecutive bytes become one RGB pixel, pixels fill a square raster
row-major from the top-left, and the square is brought to a fixed 300x300
grid: padded with black when smaller, box-averaged when larger.
"""

from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np

IMAGE_SIDE = 300
CHANNELS = 3


@dataclass(frozen=True, eq=False)
class BytecodeImage:
    pixels: np.ndarray  # (300, 300, 3) uint8, read-only

    width = IMAGE_SIDE
    height = IMAGE_SIDE
    channels = CHANNELS

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIDE, IMAGE_SIDE, CHANNELS) or self.pixels.dtype != np.uint8:
            raise ValueError(f"expected a ({IMAGE_SIDE}, {IMAGE_SIDE}, 3) uint8 raster, got "
                             f"{self.pixels.shape} {self.pixels.dtype}")
        self.pixels.flags.writeable = False

    @property
    def data(self) -> bytes:
        """Row-major, channel-interleaved bytes (270,000 of them)."""
        return self.pixels.tobytes()

    def __eq__(self, other):
        return isinstance(other, BytecodeImage) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash(self.data)


def bytes_to_pixels(data: bytes) -> tuple[int, np.ndarray]:
    """Map a byte stream to ``(side, pixels)`` with pixels shaped (side*side, 3).

    A trailing partial pixel is completed with zeros and the pixel list is
    padded with black up to the next perfect square.
    """
    n_pixels = -(-len(data) // 3)
    side = math.isqrt(n_pixels)
    if side * side < n_pixels:
        side += 1
    flat = np.zeros(side * side * 3, dtype=np.uint8)
    flat[: len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)
    return side, flat.reshape(-1, 3)


def box_bounds(side: int, out_side: int) -> np.ndarray:
    """First source index of every output cell: ceil(i * side / out_side)."""
    i = np.arange(out_side, dtype=np.int64)
    return (i * side + out_side - 1) // out_side


def box_downsample(raster: np.ndarray, out_side: int) -> np.ndarray:
    """Area-average a (side, side, C) raster down to (out_side, out_side, C).

    Output cell (y, x) averages the source indices falling in the half-open
    interval [k*side/out_side, (k+1)*side/out_side) along each axis. Integer
    rasters are rounded half-up; float rasters are returned as exact means.
    """
    side = raster.shape[0]
    if raster.shape[1] != side:
        raise ValueError("raster must be square")
    if side < out_side:
        raise ValueError(f"cannot downsample side {side} to larger {out_side}")
    lo = box_bounds(side, out_side)
    counts = np.diff(np.append(lo, side))
    if np.issubdtype(raster.dtype, np.integer):
        sums = np.add.reduceat(np.add.reduceat(raster.astype(np.int64), lo, axis=0), lo, axis=1)
        area = (counts[:, None] * counts[None, :])[..., None]
        return ((2 * sums + area) // (2 * area)).astype(raster.dtype)
    sums = np.add.reduceat(np.add.reduceat(raster.astype(np.float64), lo, axis=0), lo, axis=1)
    return sums / (counts[:, None] * counts[None, :])[..., None]


def normalize_to_300(side: int, pixels: np.ndarray) -> BytecodeImage:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.shape != (side * side, CHANNELS):
        raise ValueError(f"expected {side * side} pixels, got {pixels.shape}")
    square = pixels.reshape(side, side, CHANNELS)
    if side <= IMAGE_SIDE:
        out = np.zeros((IMAGE_SIDE, IMAGE_SIDE, CHANNELS), dtype=np.uint8)
        out[:side, :side] = square
    else:
        out = box_downsample(square, IMAGE_SIDE)
    return BytecodeImage(out)


def image_from_bytes(data: bytes) -> BytecodeImage:
    return normalize_to_300(*bytes_to_pixels(data))


def _png_chunk(tag: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body))


def encode_png(pixels: np.ndarray) -> bytes:
    """8-bit truecolor PNG with a single IDAT chunk."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, c = pixels.shape
    if c != 3:
        raise ValueError("RGB raster required")
    rows = np.concatenate([np.zeros((h, 1), dtype=np.uint8), pixels.reshape(h, w * 3)], axis=1)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
        + _png_chunk(b"IDAT", zlib.compress(rows.tobytes(), 9))
        + _png_chunk(b"IEND", b"")
    )


def render_png(image: BytecodeImage, path: Union[str, os.PathLike]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image.pixels))
