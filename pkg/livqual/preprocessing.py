"""
Foreground segmentation and block-wise orientation field.

Segmentation
------------
Each block is scored by how unevenly a bank of Gabor filters responds to it:
ridge regions excite the filter aligned with the ridges far more than the
others, flat or noisy background excites all of them about equally. The
standard deviation of the block-averaged response magnitudes across
orientations is thresholded relative to the strongest block (and an absolute
floor), then the largest 4-connected component is kept and enclosed holes
are filled.

Orientation
-----------
Averaged squared gradients of 3x3 Sobel derivatives. Angles are undirected,
in [0, pi), measured in the image frame (x to the right, y down), and name
the ridge direction (the dominant gradient direction turned by pi/2).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage as ndi
from scipy.signal import fftconvolve
from skimage.filters import gabor_kernel

from .config import GaborBankParams
from .image import BlockGrid, GrayImage, Mask, block_partition, save_image

logger = logging.getLogger(__name__)

ENERGY_EPS = 1e-6
FOUR_CONNECTED = ndi.generate_binary_structure(2, 1)


# ===========================================================================
# Gabor segmentation
# ===========================================================================

def gabor_bank(params: GaborBankParams) -> list[np.ndarray]:
    """Zero-mean complex kernels, orientations k*pi/n for k in 0..n-1."""
    kernels = []
    for k in range(params.n_orientations):
        theta = k * np.pi / params.n_orientations
        kernel = gabor_kernel(params.frequency, theta=theta, sigma_x=params.sigma, sigma_y=params.sigma)
        kernels.append(kernel - kernel.mean())
    return kernels


def gabor_block_response(image: GrayImage, params: GaborBankParams, grid: BlockGrid) -> np.ndarray:
    """Per-block std across orientations of the block-averaged response magnitude."""
    centred = image.as_float - image.as_float.mean()
    area = float(grid.block_size ** 2)
    magnitudes = np.empty((params.n_orientations,) + grid.shape)
    for k, kernel in enumerate(gabor_bank(params)):
        response = np.abs(fftconvolve(centred, kernel, mode="same"))
        magnitudes[k] = grid.block_sums(response) / area
    return magnitudes.std(axis=0)


def _largest_component(flags: np.ndarray) -> np.ndarray:
    labels, count = ndi.label(flags, structure=FOUR_CONNECTED)
    if count <= 1:
        return flags.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    # argmax returns the first maximum, so ties keep the component met first in raster order
    return labels == int(np.argmax(sizes))


def segment_foreground(
    image: GrayImage,
    params: Optional[GaborBankParams] = None,
    block_size: int = 32,
) -> Mask:
    params = params or GaborBankParams()
    grid = block_partition(image, block_size)
    spread = gabor_block_response(image, params, grid)

    peak = float(spread.max())
    blocks = (spread > params.segmentation_threshold * peak) & (spread > params.min_response)
    if blocks.any():
        blocks = _largest_component(blocks)
        blocks = ndi.binary_fill_holes(blocks, structure=FOUR_CONNECTED)
    mask = Mask.from_blocks(blocks, grid, image.pixels.shape)
    if mask.is_empty:
        logger.info("segmentation found no foreground%s", f" in {image.source}" if image.source else "")
    return mask


# ===========================================================================
# Orientation field
# ===========================================================================

@dataclass(frozen=True, eq=False)
class GradientMoments:
    """Per-block sums of gx^2, gy^2 and gx*gy over the grid."""

    gxx: np.ndarray
    gyy: np.ndarray
    gxy: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        return self.gxx + self.gyy


def sobel_gradients(image: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    values = image.as_float
    return ndi.sobel(values, axis=1, mode="reflect"), ndi.sobel(values, axis=0, mode="reflect")


def gradient_moments(image: GrayImage, grid: BlockGrid) -> GradientMoments:
    gx, gy = sobel_gradients(image)
    return GradientMoments(
        gxx=grid.block_sums(gx * gx),
        gyy=grid.block_sums(gy * gy),
        gxy=grid.block_sums(gx * gy),
    )


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into [0, pi)."""
    wrapped = np.mod(theta, np.pi)
    return np.where(wrapped >= np.pi, wrapped - np.pi, wrapped)


def angle_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Undirected difference min(|a-b|, pi-|a-b|), in [0, pi/2]."""
    d = np.abs(np.asarray(a) - np.asarray(b))
    d = np.mod(d, np.pi)
    return np.minimum(d, np.pi - d)


@dataclass(frozen=True, eq=False)
class OrientationField:
    """Block ridge directions. Background and flat blocks are invalid with coherence 0."""

    theta: np.ndarray
    coherence: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        theta = wrap_angle(np.asarray(self.theta, dtype=np.float64))
        valid = np.asarray(self.valid, dtype=bool)
        coherence = np.where(valid, np.clip(np.asarray(self.coherence, dtype=np.float64), 0.0, 1.0), 0.0)
        if not (theta.shape == coherence.shape == valid.shape) or theta.ndim != 2:
            raise ValueError("theta, coherence and valid must share one 2-D block shape")
        for name, arr in (("theta", theta), ("coherence", coherence), ("valid", valid)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_angles(cls, theta: np.ndarray, valid: Optional[np.ndarray] = None) -> "OrientationField":
        """Field with unit coherence wherever valid; for callers that already know the angles."""
        theta = np.asarray(theta, dtype=np.float64)
        valid = np.ones(theta.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls(theta=theta, coherence=valid.astype(np.float64), valid=valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def equals(self, other: "OrientationField") -> bool:
        return (
            np.array_equal(self.theta, other.theta)
            and np.array_equal(self.coherence, other.coherence)
            and np.array_equal(self.valid, other.valid)
        )


def orientation_from_moments(moments: GradientMoments, foreground: np.ndarray) -> OrientationField:
    dxx = moments.gxx - moments.gyy
    two_xy = 2.0 * moments.gxy
    energy = moments.energy
    valid = np.asarray(foreground, dtype=bool) & (energy >= ENERGY_EPS)

    gradient_dir = 0.5 * np.arctan2(two_xy, dxx)
    theta = wrap_angle(gradient_dir + np.pi / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(valid, np.hypot(dxx, two_xy) / np.where(valid, energy, 1.0), 0.0)
    theta = np.where(valid, theta, 0.0)
    return OrientationField(theta=theta, coherence=coherence, valid=valid)


def estimate_orientation(image: GrayImage, grid: BlockGrid, mask: Mask) -> OrientationField:
    return orientation_from_moments(gradient_moments(image, grid), mask.blocks)


# ---------------------------------------------------------------------------
# Debug dumps
# ---------------------------------------------------------------------------

def dump_mask_pgm(mask: Mask, path: Union[str, Path]) -> Path:
    pixels = np.where(mask.pixels, 255, 0).astype(np.uint8)
    return save_image(GrayImage(pixels), path)


def dump_orientation_csv(field: OrientationField, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block_row", "block_col", "theta", "coherence", "valid"])
        rows, cols = field.shape
        for r in range(rows):
            for c in range(cols):
                writer.writerow([
                    r, c,
                    f"{field.theta[r, c]:.9g}",
                    f"{field.coherence[r, c]:.9g}",
                    int(field.valid[r, c]),
                ])
    return path
