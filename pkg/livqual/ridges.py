"""
Ridge/valley sinusoid model of a block and the clarity measures built on it.

A block's pixels are projected onto the ridge normal and averaged along the
ridge direction, which gives a 1-D gray profile that should look like a
sinusoid in clear regions. From it we read an amplitude, a variance and a
frequency, and we split the block's pixels into ridge (darker half of the
profile) and valley sets whose gray-level distributions should not overlap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .config import ThresholdParams
from .errors import EmptyForeground
from .image import BlockGrid, GrayImage, Mask
from .preprocessing import OrientationField

logger = logging.getLogger(__name__)

MIN_BIN_FRACTION = 0.25

BlockIndex = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class RidgeSignature:
    profile: np.ndarray
    pixel_bins: np.ndarray  # profile index per block pixel, -1 when the pixel's bin was dropped
    amplitude: float
    variance: float
    frequency: float
    reliable: bool


def _project(block: np.ndarray, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    h, w = block.shape
    ys, xs = np.mgrid[0:h, 0:w]
    # integer centre so axis-aligned directions land on whole bins
    t = -(xs - w // 2) * np.sin(theta) + (ys - h // 2) * np.cos(theta)
    bins = np.rint(t).astype(np.int64)
    bins -= bins.min()
    flat = bins.ravel()
    counts = np.bincount(flat)
    sums = np.bincount(flat, weights=block.ravel())

    kept = np.flatnonzero(counts >= MIN_BIN_FRACTION * counts.max())
    lo, hi = int(kept[0]), int(kept[-1])
    profile = sums[lo:hi + 1] / np.maximum(counts[lo:hi + 1], 1)
    pixel_bins = bins - lo
    pixel_bins[(pixel_bins < 0) | (pixel_bins > hi - lo)] = -1
    return profile, pixel_bins


def _extrema(profile: np.ndarray) -> Tuple[list, list, list]:
    """Parabola-refined (position, value) of interior maxima and minima."""
    maxima, minima, positions = [], [], []
    for i in range(1, len(profile) - 1):
        left, mid, right = profile[i - 1], profile[i], profile[i + 1]
        is_max = mid > left and mid >= right
        is_min = mid < left and mid <= right
        if not (is_max or is_min):
            continue
        denom = left - 2.0 * mid + right
        offset = 0.0 if denom == 0 else float(np.clip(0.5 * (left - right) / denom, -1.0, 1.0))
        value = mid - 0.25 * (left - right) * offset
        positions.append(i + offset)
        (maxima if is_max else minima).append(value)
    return maxima, minima, positions


def extract_signature(
    block: np.ndarray,
    theta: float,
    thresholds: Optional[ThresholdParams] = None,
) -> RidgeSignature:
    """Sinusoid parameters of one block whose ridges run along ``theta``."""
    thresholds = thresholds or ThresholdParams()
    values = np.asarray(block, dtype=np.float64)
    profile, pixel_bins = _project(values, theta)

    maxima, minima, positions = _extrema(profile)
    amplitude = 0.0
    if maxima and minima:
        amplitude = max(0.0, (float(np.mean(maxima)) - float(np.mean(minima))) / 2.0)
    frequency = 0.0
    if len(positions) >= 2:
        gap = float(np.mean(np.diff(positions)))
        frequency = 1.0 / (2.0 * gap) if gap > 0 else 0.0

    reliable = (
        amplitude >= thresholds.a_min
        and thresholds.freq_min <= frequency <= thresholds.freq_max
    )
    return RidgeSignature(
        profile=profile,
        pixel_bins=pixel_bins,
        amplitude=amplitude,
        variance=float(profile.var()),
        frequency=frequency,
        reliable=bool(reliable),
    )


def signature_at(
    image: GrayImage,
    grid: BlockGrid,
    row: int,
    col: int,
    theta: float,
    thresholds: Optional[ThresholdParams] = None,
) -> RidgeSignature:
    return extract_signature(grid.block(image.as_float, row, col), theta, thresholds)


def block_signatures(
    image: GrayImage,
    grid: BlockGrid,
    mask: Mask,
    field: OrientationField,
    thresholds: Optional[ThresholdParams] = None,
) -> Dict[BlockIndex, Optional[RidgeSignature]]:
    """Signature per foreground block in raster order; ``None`` where orientation is invalid."""
    out: Dict[BlockIndex, Optional[RidgeSignature]] = {}
    for row, col in zip(*np.nonzero(mask.blocks)):
        row, col = int(row), int(col)
        if not field.valid[row, col]:
            out[(row, col)] = None
            continue
        out[(row, col)] = signature_at(image, grid, row, col, float(field.theta[row, col]), thresholds)
    return out


# ===========================================================================
# Local clarity
# ===========================================================================

def ridge_valley_split(block: np.ndarray, signature: RidgeSignature) -> Tuple[np.ndarray, np.ndarray]:
    """Gray values of ridge pixels (bin below the profile mean) and valley pixels."""
    values = np.asarray(block, dtype=np.float64)
    in_profile = signature.pixel_bins >= 0
    ridge_bins = signature.profile < signature.profile.mean()
    is_ridge = np.zeros(values.shape, dtype=bool)
    is_ridge[in_profile] = ridge_bins[signature.pixel_bins[in_profile]]
    return values[in_profile & is_ridge], values[in_profile & ~is_ridge]


@dataclass(frozen=True)
class ClarityOverlap:
    threshold: float
    alpha: float  # ridge pixels brighter than the threshold
    beta: float  # valley pixels darker than the threshold

    @property
    def overlap(self) -> float:
        return (self.alpha + self.beta) / 2.0


def clarity_overlap(ridge: np.ndarray, valley: np.ndarray) -> Optional[ClarityOverlap]:
    if ridge.size == 0 or valley.size == 0:
        return None
    threshold = (float(ridge.mean()) + float(valley.mean())) / 2.0
    return ClarityOverlap(
        threshold=threshold,
        alpha=float(np.count_nonzero(ridge > threshold)) / ridge.size,
        beta=float(np.count_nonzero(valley < threshold)) / valley.size,
    )


@dataclass(frozen=True)
class LocalClarity:
    q_lcs1: float
    q_lcs2: float
    reliable_blocks: int
    foreground_blocks: int

    @property
    def lcs1_fallback(self) -> bool:
        return self.reliable_blocks == 0


def compute_lcs(
    image: GrayImage,
    grid: BlockGrid,
    mask: Mask,
    field: OrientationField,
    thresholds: Optional[ThresholdParams] = None,
    signatures: Optional[Dict[BlockIndex, Optional[RidgeSignature]]] = None,
) -> LocalClarity:
    """Mean ridge/valley overlap: over reliable blocks (LCS1) and over all blocks (LCS2). Lower is clearer."""
    thresholds = thresholds or ThresholdParams()
    if signatures is None:
        signatures = block_signatures(image, grid, mask, field, thresholds)
    if not signatures:
        raise EmptyForeground("no foreground blocks for local clarity", source=image.source)

    overlaps = []
    for (row, col), signature in signatures.items():
        if signature is None or not signature.reliable:
            continue
        ridge, valley = ridge_valley_split(grid.block(image.as_float, row, col), signature)
        result = clarity_overlap(ridge, valley)
        if result is not None:
            overlaps.append(result.overlap)

    fallback = thresholds.unreliable_overlap
    n_fg = len(signatures)
    n_unreliable = n_fg - len(overlaps)
    if overlaps:
        q_lcs1 = float(np.mean(overlaps))
    else:
        q_lcs1 = fallback
        logger.warning("no reliable ridge blocks, LCS1 falls back to %.2f%s",
                       fallback, f" for {image.source}" if image.source else "")
    q_lcs2 = (float(np.sum(overlaps)) + n_unreliable * fallback) / n_fg
    return LocalClarity(q_lcs1=q_lcs1, q_lcs2=q_lcs2, reliable_blocks=len(overlaps), foreground_blocks=n_fg)


# ===========================================================================
# Sinusoid amplitude and variance
# ===========================================================================

@dataclass(frozen=True)
class SinusoidGoodness:
    q_a: float
    q_var: float


def compute_sinusoid_goodness(
    image: GrayImage,
    grid: BlockGrid,
    mask: Mask,
    field: OrientationField,
    thresholds: Optional[ThresholdParams] = None,
    signatures: Optional[Dict[BlockIndex, Optional[RidgeSignature]]] = None,
) -> SinusoidGoodness:
    """Fraction of foreground blocks with enough amplitude (q_a) and profile variance (q_var)."""
    thresholds = thresholds or ThresholdParams()
    if signatures is None:
        signatures = block_signatures(image, grid, mask, field, thresholds)
    if not signatures:
        raise EmptyForeground("no foreground blocks for sinusoid goodness", source=image.source)

    good_a = good_var = 0
    for signature in signatures.values():
        if signature is None:
            continue
        good_a += signature.amplitude >= thresholds.a_min
        good_var += signature.variance >= thresholds.v_min
    n_fg = len(signatures)
    return SinusoidGoodness(q_a=good_a / n_fg, q_var=good_var / n_fg)
