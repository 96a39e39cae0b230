"""
The ten-measure quality parameterization of a fingerprint image.

Order is fixed and versioned (``FEATURE_ORDER_VERSION``):

    index  name     property           information source
    0      q_ocl    ridge strength     local angle
    1      q_e      ridge strength     power spectrum
    2      q_loq    ridge continuity   local angle
    3      q_cof    ridge continuity   local angle
    4      q_mean   ridge clarity      pixel intensity
    5      q_std    ridge clarity      pixel intensity
    6      q_lcs1   ridge clarity      pixel intensity
    7      q_lcs2   ridge clarity      pixel intensity
    8      q_a      ridge clarity      pixel intensity
    9      q_var    ridge clarity      pixel intensity

q_mean/q_std are gray levels; the rest lie in [0, 1]. q_lcs1/q_lcs2 are
overlaps, so lower means clearer; no measure is inverted.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT_CONFIG, LivQualConfig, SpectralBandParams
from .errors import EmptyForeground, ForegroundTooSmall, InvalidParams, LivQualError, NoComparableBlocks
from .image import BlockGrid, GrayImage, Mask
from .preprocessing import (
    GradientMoments,
    OrientationField,
    angle_difference,
    gradient_moments,
    orientation_from_moments,
    segment_foreground,
)
from .ridges import block_signatures, compute_lcs, compute_sinusoid_goodness

logger = logging.getLogger(__name__)

FEATURE_ORDER_VERSION = 1
FEATURE_NAMES: Tuple[str, ...] = (
    "q_ocl", "q_e", "q_loq", "q_cof", "q_mean", "q_std", "q_lcs1", "q_lcs2", "q_a", "q_var",
)
N_FEATURES = len(FEATURE_NAMES)

RIDGE_STRENGTH = "ridge strength"
RIDGE_CONTINUITY = "ridge continuity"
RIDGE_CLARITY = "ridge clarity"

FEATURE_PROPERTIES = {
    "q_ocl": RIDGE_STRENGTH, "q_e": RIDGE_STRENGTH,
    "q_loq": RIDGE_CONTINUITY, "q_cof": RIDGE_CONTINUITY,
    "q_mean": RIDGE_CLARITY, "q_std": RIDGE_CLARITY, "q_lcs1": RIDGE_CLARITY,
    "q_lcs2": RIDGE_CLARITY, "q_a": RIDGE_CLARITY, "q_var": RIDGE_CLARITY,
}
FEATURE_SOURCES = {
    "q_ocl": "local angle", "q_e": "power spectrum", "q_loq": "local angle", "q_cof": "local angle",
    "q_mean": "pixel intensity", "q_std": "pixel intensity", "q_lcs1": "pixel intensity",
    "q_lcs2": "pixel intensity", "q_a": "pixel intensity", "q_var": "pixel intensity",
}

_UNIT_FEATURES = ("q_ocl", "q_e", "q_loq", "q_cof", "q_lcs1", "q_lcs2", "q_a", "q_var")
_RANGES = {name: (0.0, 1.0) for name in _UNIT_FEATURES}
_RANGES["q_mean"] = (0.0, 255.0)
_RANGES["q_std"] = (0.0, 127.5)

FLAG_LCS1_FALLBACK = "lcs1_fallback"
FLAG_EMPTY_SPECTRUM = "empty_spectrum"


@dataclass(frozen=True)
class QualityVector:
    q_ocl: float
    q_e: float
    q_loq: float
    q_cof: float
    q_mean: float
    q_std: float
    q_lcs1: float
    q_lcs2: float
    q_a: float
    q_var: float
    flags: frozenset = field(default_factory=frozenset, compare=False)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float], flags: Iterable[str] = ()) -> "QualityVector":
        values = [float(v) for v in values]
        if len(values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} values, got {len(values)}")
        return cls(*values, flags=frozenset(flags))

    def range_violations(self) -> list[str]:
        out = []
        for name in FEATURE_NAMES:
            low, high = _RANGES[name]
            value = getattr(self, name)
            if not (math.isfinite(value) and low <= value <= high):
                out.append(f"{name}={value!r} outside [{low}, {high}]")
        return out


# ===========================================================================
# Ridge strength
# ===========================================================================

def gradient_eigenvalues(gxx: np.ndarray, gyy: np.ndarray, gxy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form (lambda_max, lambda_min) of [[gxx, gxy], [gxy, gyy]]."""
    half_trace = (gxx + gyy) / 2.0
    disc = np.sqrt(((gxx - gyy) / 2.0) ** 2 + gxy ** 2)
    return half_trace + disc, np.maximum(half_trace - disc, 0.0)


def block_ocl(moments: GradientMoments) -> np.ndarray:
    """1 - lambda_min/lambda_max per block, 0 where lambda_max < 1e-9."""
    lam_max, lam_min = gradient_eigenvalues(moments.gxx, moments.gyy, moments.gxy)
    safe = lam_max >= 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(safe, 1.0 - lam_min / np.where(safe, lam_max, 1.0), 0.0)
    return np.clip(scores, 0.0, 1.0)


def centroid_weights(grid: BlockGrid, mask: Mask) -> np.ndarray:
    """Gaussian weight of each block centre's distance to the foreground centroid."""
    if mask.centroid is None:
        raise EmptyForeground("empty foreground has no centroid")
    cx, cy = mask.centroid
    x0, y0, x1, y1 = mask.bounding_box
    radius = 0.5 * math.hypot(x1 - x0, y1 - y0)
    bx, by = grid.centers()
    d2 = (bx - cx) ** 2 + (by - cy) ** 2
    return np.exp(-d2 / (2.0 * radius ** 2))


def compute_ocl(
    image: GrayImage,
    grid: BlockGrid,
    mask: Mask,
    moments: Optional[GradientMoments] = None,
) -> float:
    fg = mask.blocks
    if not fg.any():
        raise EmptyForeground("no foreground blocks for orientation certainty", source=image.source)
    moments = moments or gradient_moments(image, grid)
    scores = block_ocl(moments)[fg]
    weights = centroid_weights(grid, mask)[fg]
    return float(np.clip(np.sum(weights * scores) / np.sum(weights), 0.0, 1.0))


def band_energies(image: GrayImage, mask: Mask, bands: Optional[SpectralBandParams] = None) -> np.ndarray:
    """Mean power of the windowed foreground crop in each ring-shaped band."""
    bands = bands or SpectralBandParams()
    if mask.is_empty:
        raise EmptyForeground("no foreground for the power spectrum", source=image.source)
    x0, y0, x1, y1 = mask.bounding_box
    if x1 - x0 < bands.min_crop or y1 - y0 < bands.min_crop:
        raise ForegroundTooSmall(
            f"foreground box {x1 - x0}x{y1 - y0} is below {bands.min_crop}x{bands.min_crop}",
            source=image.source,
        )
    crop = image.as_float[y0:y1, x0:x1]
    inside = mask.pixels[y0:y1, x0:x1]
    fill = float(crop[inside].mean())
    crop = np.where(inside, crop, fill) - fill

    h, w = crop.shape
    window = np.outer(np.hanning(h), np.hanning(w))
    power = np.abs(np.fft.fft2(crop * window)) ** 2
    radius = np.hypot(np.fft.fftfreq(h)[:, None], np.fft.fftfreq(w)[None, :])

    edges = np.linspace(bands.f_low, bands.f_high, bands.n_bands + 1)
    sums, _ = np.histogram(radius, bins=edges, weights=power)
    counts, _ = np.histogram(radius, bins=edges)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def band_concentration(energies: np.ndarray) -> float:
    """1 - H/ln(R) of the band energy distribution; 0 when there is no energy."""
    energies = np.asarray(energies, dtype=np.float64)
    total = float(energies.sum())
    if total <= 0.0:
        return 0.0
    p = energies[energies > 0] / total
    entropy = float(-np.sum(p * np.log(p)))
    q = 1.0 - entropy / math.log(energies.size)
    if abs(q) < 1e-12:
        return 0.0
    return float(min(1.0, max(0.0, q)))


def compute_energy_concentration(
    image: GrayImage,
    mask: Mask,
    bands: Optional[SpectralBandParams] = None,
) -> float:
    return band_concentration(band_energies(image, mask, bands))


# ===========================================================================
# Ridge continuity
# ===========================================================================

_NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def compute_loq(field: OrientationField) -> float:
    """Mean over blocks of 1 - (mean angle difference to valid 8-neighbours)/(pi/2)."""
    theta = np.pad(field.theta, 1)
    valid = np.pad(field.valid, 1)
    rows, cols = field.shape
    centre_valid = valid[1:-1, 1:-1]
    total = np.zeros(field.shape)
    count = np.zeros(field.shape, dtype=np.int64)
    for dr, dc in _NEIGHBOURS:
        nb_theta = theta[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
        nb_valid = valid[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols] & centre_valid
        total += np.where(nb_valid, angle_difference(field.theta, nb_theta), 0.0)
        count += nb_valid
    comparable = count > 0
    if not comparable.any():
        raise NoComparableBlocks("no valid block has a valid neighbour")
    quality = 1.0 - (total[comparable] / count[comparable]) / (math.pi / 2)
    return float(np.clip(quality.mean(), 0.0, 1.0))


def compute_cof(field: OrientationField, t_abrupt: float = math.pi / 8) -> float:
    """1 - fraction of consecutive valid block pairs (rows, then columns) with an abrupt turn."""
    if not 0.0 < t_abrupt <= math.pi / 2:
        raise InvalidParams(f"t_abrupt must lie in (0, pi/2], got {t_abrupt!r}")
    pairs = violations = 0
    for a, b, va, vb in (
        (field.theta[:, :-1], field.theta[:, 1:], field.valid[:, :-1], field.valid[:, 1:]),
        (field.theta[:-1, :], field.theta[1:, :], field.valid[:-1, :], field.valid[1:, :]),
    ):
        both = va & vb
        pairs += int(both.sum())
        violations += int((angle_difference(a, b)[both] > t_abrupt).sum())
    if pairs == 0:
        raise NoComparableBlocks("no consecutive valid block pair")
    return 1.0 - violations / pairs


# ===========================================================================
# Ridge clarity: gray-level statistics
# ===========================================================================

def compute_gray_stats(image: GrayImage, mask: Mask) -> Tuple[float, float]:
    """Population mean and standard deviation of the foreground pixels."""
    values = image.as_float[mask.pixels]
    if values.size < 2:
        raise EmptyForeground("fewer than two foreground pixels", source=image.source)
    return float(values.mean()), float(values.std())


# ===========================================================================
# Full vector
# ===========================================================================

def extract_quality_vector(
    image: GrayImage,
    config: LivQualConfig = DEFAULT_CONFIG,
    source: Optional[str] = None,
) -> QualityVector:
    source = source or image.source
    try:
        mask = segment_foreground(image, config.gabor, config.block_size)
        if mask.is_empty or not mask.blocks.any():
            raise EmptyForeground("segmentation found no foreground")
        grid = mask.grid
        moments = gradient_moments(image, grid)
        field = orientation_from_moments(moments, mask.blocks)

        flags = set()
        q_ocl = compute_ocl(image, grid, mask, moments)
        energies = band_energies(image, mask, config.bands)
        if not energies.any():
            flags.add(FLAG_EMPTY_SPECTRUM)
        q_e = band_concentration(energies)
        q_loq = compute_loq(field)
        q_cof = compute_cof(field, config.thresholds.t_abrupt)
        q_mean, q_std = compute_gray_stats(image, mask)

        signatures = block_signatures(image, grid, mask, field, config.thresholds)
        clarity = compute_lcs(image, grid, mask, field, config.thresholds, signatures)
        if clarity.lcs1_fallback:
            flags.add(FLAG_LCS1_FALLBACK)
        goodness = compute_sinusoid_goodness(image, grid, mask, field, config.thresholds, signatures)
    except LivQualError as exc:
        if source and not exc.source:
            exc.with_source(source)
        raise

    return QualityVector(
        q_ocl=q_ocl, q_e=q_e, q_loq=q_loq, q_cof=q_cof,
        q_mean=q_mean, q_std=q_std,
        q_lcs1=clarity.q_lcs1, q_lcs2=clarity.q_lcs2,
        q_a=goodness.q_a, q_var=goodness.q_var,
        flags=frozenset(flags),
    )


# ===========================================================================
# Discriminative power across sensors
# ===========================================================================

@dataclass(frozen=True)
class FeatureUsage:
    per_feature: Mapping[str, int]
    per_property: Mapping[str, int]
    per_source: Mapping[str, int]
    n_subsets: int

    def ranked(self) -> list[Tuple[str, int]]:
        return sorted(self.per_feature.items(), key=lambda kv: (-kv[1], FEATURE_NAMES.index(kv[0])))


def feature_usage(best_masks: Mapping[str, int]) -> FeatureUsage:
    """How often each feature, ridge property and information source appears in the per-sensor best subsets."""
    per_feature = Counter({name: 0 for name in FEATURE_NAMES})
    for mask in best_masks.values():
        for i, name in enumerate(FEATURE_NAMES):
            if mask >> i & 1:
                per_feature[name] += 1
    per_property = Counter({RIDGE_STRENGTH: 0, RIDGE_CONTINUITY: 0, RIDGE_CLARITY: 0})
    for name, count in per_feature.items():
        per_property[FEATURE_PROPERTIES[name]] += count
    per_source = Counter({source: 0 for source in FEATURE_SOURCES.values()})
    for name, count in per_feature.items():
        per_source[FEATURE_SOURCES[name]] += count
    return FeatureUsage(dict(per_feature), dict(per_property), dict(per_source), len(best_masks))
