"""Blockwise orthonormal DCT, band partitions, energy profiles, step weights.

The transform is the type-II DCT in its orthonormal scaling, applied
separately per block and channel:

    D(u, v) = c(u) c(v) sum_{i,j} X(i, j) cos((2i+1) u pi / 2N) cos((2j+1) v pi / 2N)

with c(0) = sqrt(1/N) and c(u>0) = sqrt(2/N). With that scaling the basis
matrix is orthogonal, so the inverse transform is the transpose and Parseval
holds exactly: sum D^2 == sum X^2 per block.

Coefficient positions are grouped into low / middle / high bands by their
anti-diagonal index d = u + v:

    low:    d <= floor(2 (N - 1) / 3)
    high:   d >  floor(4 (N - 1) / 3)
    middle: otherwise

For the default N = 8 the thresholds are 4 and 9.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateInput, DimensionError, NumericError
from .imaging import Image, from_block_array, to_block_array

BAND_NAMES = ("low", "middle", "high", "all")

_basis_cache: dict[int, np.ndarray] = {}
_mask_cache: dict[tuple[int, str], np.ndarray] = {}


def dct_basis(block_size: int) -> np.ndarray:
    """Orthonormal type-II DCT basis matrix, cached per block size (read-only)."""
    n = int(block_size)
    if n < 2:
        raise DimensionError(f"block_size must be >= 2, got {n}")
    cached = _basis_cache.get(n)
    if cached is None:
        i = np.arange(n)
        u = i[:, np.newaxis]
        basis = np.cos((2 * i + 1) * u * np.pi / (2 * n))
        scale = np.full(n, np.sqrt(2.0 / n))
        scale[0] = np.sqrt(1.0 / n)
        basis = scale[:, np.newaxis] * basis
        basis = np.ascontiguousarray(basis)
        basis.flags.writeable = False
        _basis_cache[n] = basis
        cached = basis
    return cached


def dct2_block(tile: np.ndarray) -> np.ndarray:
    """Forward 2-D DCT of one square tile."""
    tile = np.asarray(tile, dtype=np.float64)
    if tile.ndim != 2 or tile.shape[0] != tile.shape[1]:
        raise DimensionError(f"tile must be square, got shape {tile.shape}")
    if not np.all(np.isfinite(tile)):
        raise NumericError("tile contains non-finite values")
    b = dct_basis(tile.shape[0])
    return b @ tile @ b.T


def idct2_block(coeffs: np.ndarray) -> np.ndarray:
    """Inverse 2-D DCT of one square coefficient tile."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise DimensionError(f"tile must be square, got shape {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise NumericError("tile contains non-finite values")
    b = dct_basis(coeffs.shape[0])
    return b.T @ coeffs @ b


@dataclass(frozen=True)
class Spectrum:
    """Per-block DCT coefficients.

    coeffs has shape (rows, cols, channels, N, N), aligned with the BlockGrid
    tile layout of the source image.
    """

    block_size: int
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=np.float64)
        if arr.ndim != 5:
            raise DimensionError(f"coeffs must be 5-D, got shape {arr.shape}")
        n = int(self.block_size)
        if arr.shape[3] != n or arr.shape[4] != n:
            raise DimensionError(
                f"coefficient tiles {arr.shape[3:]} do not match block_size {n}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "block_size", n)
        object.__setattr__(self, "coeffs", arr)

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[1]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[2]


def _coerce_pixels(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"expected (H, W, C) pixels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("pixel array contains non-finite values")
    return arr


def transform_blocks(blocks5: np.ndarray, block_size: int, inverse: bool = False) -> np.ndarray:
    """Apply the (inverse) DCT to every tile of a (rows, cols, C, N, N) array."""
    n = int(block_size)
    b = dct_basis(n)
    flat = np.ascontiguousarray(blocks5.reshape(-1, n, n))
    if inverse:
        out = _kernels.block_transform(flat, np.ascontiguousarray(b.T), b)
    else:
        out = _kernels.block_transform(flat, b, np.ascontiguousarray(b.T))
    return out.reshape(blocks5.shape)


def forward_spectrum(img, block_size: int) -> Spectrum:
    """Blockwise DCT of an Image or a raw (H, W, C) float array.

    Raw arrays are accepted because gradients and other non-image fields also
    need transforming; they only have to be finite, not in [0, 1].
    """
    data = _coerce_pixels(img)
    blocks = to_block_array(data, block_size)
    return Spectrum(block_size, transform_blocks(blocks, block_size))


def inverse_spectrum(spec: Spectrum) -> np.ndarray:
    """Blockwise inverse DCT, returning raw (H, W, C) pixels.

    The inverse transform of a perturbed spectrum may leave [0, 1], so the
    result is a plain array; clamp_pixels turns it back into an Image.
    """
    blocks = transform_blocks(spec.coeffs, spec.block_size, inverse=True)
    return from_block_array(blocks)


def band_thresholds(block_size: int) -> tuple[int, int]:
    """(low_max, mid_max): d <= low_max is low, d > mid_max is high."""
    n = int(block_size)
    return (2 * (n - 1)) // 3, (4 * (n - 1)) // 3


@dataclass(frozen=True)
class BandMask:
    """Binary (N, N) selector of coefficient positions belonging to one band."""

    block_size: int
    band: str
    mask: np.ndarray


def band_mask(block_size: int, band: str) -> BandMask:
    """Mask of the given band ('low', 'middle', 'high', or 'all')."""
    n = int(block_size)
    if n < 3:
        raise DimensionError(f"band partition needs block_size >= 3, got {n}")
    if band not in BAND_NAMES:
        raise DimensionError(f"unknown band {band!r}; expected one of {BAND_NAMES}")
    key = (n, band)
    cached = _mask_cache.get(key)
    if cached is None:
        lo, mid = band_thresholds(n)
        d = np.add.outer(np.arange(n), np.arange(n))
        if band == "low":
            sel = d <= lo
        elif band == "middle":
            sel = (d > lo) & (d <= mid)
        elif band == "high":
            sel = d > mid
        else:
            sel = np.ones((n, n), dtype=bool)
        cached = np.ascontiguousarray(sel.astype(np.float64))
        cached.flags.writeable = False
        _mask_cache[key] = cached
    return BandMask(n, band, cached)


def band_energy_profile(img, block_size: int) -> np.ndarray:
    """Mean squared-coefficient mass per anti-diagonal index.

    Entry d (0 <= d <= 2N-2) is the mean over blocks and channels of the sum
    of squared coefficients at positions with u + v = d. By Parseval the
    entries sum to the mean per-block pixel energy.
    """
    spec = img if isinstance(img, Spectrum) else forward_spectrum(img, block_size)
    n = spec.block_size
    sq = spec.coeffs.reshape(-1, n, n) ** 2
    mean_sq = sq.mean(axis=0)
    d = np.add.outer(np.arange(n), np.arange(n))
    profile = np.zeros(2 * n - 1, dtype=np.float64)
    np.add.at(profile, d.ravel(), mean_sq.ravel())
    return profile


def high_band_mass(profile: np.ndarray, block_size: int) -> float:
    """Sum of the profile entries that belong to the high band."""
    _, mid = band_thresholds(block_size)
    return float(np.asarray(profile, dtype=np.float64)[mid + 1:].sum())


@dataclass(frozen=True)
class WeightMatrix:
    """Per-position step weights: nonnegative (N, N), max entry exactly 1."""

    block_size: int
    weights: np.ndarray


def compute_weight_matrix(spec: Spectrum) -> WeightMatrix:
    """Energy-proportional step weights for one image.

    weights(u, v) = mean over blocks and channels of |coeff(u, v)|, normalized
    by the maximum entry so the strongest position has weight exactly 1.
    """
    n = spec.block_size
    mags = np.abs(spec.coeffs.reshape(-1, n, n)).mean(axis=0)
    peak = mags.max()
    if peak == 0.0:
        raise DegenerateInput("all-zero spectrum has no usable weights")
    w = np.ascontiguousarray(mags / peak)
    w.flags.writeable = False
    return WeightMatrix(n, w)


def profile_csv(profile: np.ndarray) -> str:
    """Render an energy profile as CSV rows 'd,energy' with a header line."""
    buf = io.StringIO()
    buf.write("d,energy\n")
    for d, e in enumerate(np.asarray(profile, dtype=np.float64)):
        buf.write(f"{d},{float(e)!r}\n")
    return buf.getvalue()


def write_profile_csv(path, profile: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(profile_csv(profile))
