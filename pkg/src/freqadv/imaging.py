"""Image values, block tiling, pixel constraints, and PNG I/O.

Images are (height, width, channels) float64 arrays with every value in
[0.0, 1.0], channels-last, channels either 1 (grayscale) or 3 (RGB). The
Image wrapper validates on construction and freezes its buffer, so any Image
instance can be shared across threads and reused as an attack starting point
without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage

from .errors import DimensionError, NumericError, ShapeMismatch

_VALID_CHANNELS = (1, 3)


def _as_pixel_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise DimensionError(f"expected a (H, W, C) array, got shape {arr.shape}")
    if arr.shape[2] not in _VALID_CHANNELS:
        raise DimensionError(f"channel count must be 1 or 3, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"image sides must be positive, got {arr.shape[:2]}")
    return arr


@dataclass(frozen=True)
class Image:
    """Validated unit-range image. data has shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_pixel_array(self.data)
        if not np.all(np.isfinite(arr)):
            raise NumericError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise NumericError(
                f"pixel values outside [0, 1]: min={float(arr.min())!r} "
                f"max={float(arr.max())!r}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BlockGrid:
    """Non-overlapping square tiles of an image.

    blocks has shape (rows, cols, channels, block_size, block_size); tile
    (r, c) of channel k holds the pixels of that block in row-major order.
    """

    block_size: int
    blocks: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.blocks, dtype=np.float64)
        if arr.ndim != 5:
            raise DimensionError(f"blocks must be 5-D, got shape {arr.shape}")
        n = int(self.block_size)
        if n < 1:
            raise DimensionError(f"block_size must be positive, got {n}")
        if arr.shape[3] != n or arr.shape[4] != n:
            raise DimensionError(
                f"tile shape {arr.shape[3:]} does not match block_size {n}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "block_size", n)
        object.__setattr__(self, "blocks", arr)

    @property
    def rows(self) -> int:
        return self.blocks.shape[0]

    @property
    def cols(self) -> int:
        return self.blocks.shape[1]

    @property
    def channels(self) -> int:
        return self.blocks.shape[2]


def to_block_array(data: np.ndarray, block_size: int) -> np.ndarray:
    """Reshape (H, W, C) pixels into (rows, cols, C, N, N) tiles. Pure memory
    movement: values are untouched, so the round trip is bit-identical."""
    h, w, c = data.shape
    n = int(block_size)
    if n < 1:
        raise DimensionError(f"block_size must be positive, got {n}")
    if h % n != 0 or w % n != 0:
        raise DimensionError(
            f"image sides ({h}, {w}) are not divisible by block_size {n}"
        )
    rows, cols = h // n, w // n
    tiled = data.reshape(rows, n, cols, n, c)
    return np.ascontiguousarray(tiled.transpose(0, 2, 4, 1, 3))


def from_block_array(blocks: np.ndarray) -> np.ndarray:
    """Inverse of to_block_array."""
    rows, cols, c, n, _ = blocks.shape
    merged = blocks.transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(merged.reshape(rows * n, cols * n, c))


def split_blocks(img: Image, block_size: int) -> BlockGrid:
    """Tile an image into non-overlapping block_size x block_size squares."""
    return BlockGrid(block_size, to_block_array(img.data, block_size))


def merge_blocks(grid: BlockGrid) -> Image:
    """Reassemble a BlockGrid into the image it was split from."""
    return Image(from_block_array(grid.blocks))


def clamp_pixels(img) -> Image:
    """Clamp pixels into [0, 1]. Accepts an Image or a raw (H, W, C) array.

    NaN anywhere raises NumericError rather than being silently clipped.
    """
    data = img.data if isinstance(img, Image) else _as_pixel_array(img)
    if np.isnan(data).any():
        raise NumericError("cannot clamp NaN pixels")
    return Image(np.clip(data, 0.0, 1.0))


def project_linf_array(adv: np.ndarray, init: np.ndarray, eps: float) -> np.ndarray:
    """Array-level L-infinity projection: ball clamp around init, then range clamp."""
    out = np.clip(adv, init - eps, init + eps)
    return np.clip(out, 0.0, 1.0)


def project_linf(adv: Image, init: Image, eps: float) -> Image:
    """Project adv into the L-infinity ball of radius eps around init, then [0, 1].

    Idempotent, and the identity on any adv already satisfying both constraints.
    """
    if not isinstance(adv, Image):
        adv = clamp_pixels(adv)
    if adv.data.shape != init.data.shape:
        raise ShapeMismatch(
            f"adv shape {adv.data.shape} != init shape {init.data.shape}"
        )
    eps = float(eps)
    if not np.isfinite(eps) or eps < 0.0:
        raise NumericError(f"eps must be finite and >= 0, got {eps!r}")
    return Image(project_linf_array(adv.data, init.data, eps))


def load_png(path) -> Image:
    """Read an 8-bit PNG as a unit-range image (value / 255)."""
    with PilImage.open(path) as pil:
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB" if len(pil.getbands()) > 2 else "L")
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    return Image(arr)


def save_png(img: Image, path) -> None:
    """Write an image as an 8-bit PNG: round(value * 255), clamped to [0, 255]."""
    q = np.round(img.data * 255.0)
    q = np.clip(q, 0.0, 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = PilImage.fromarray(q[:, :, 0], mode="L")
    else:
        pil = PilImage.fromarray(q, mode="RGB")
    pil.save(path, format="PNG")
