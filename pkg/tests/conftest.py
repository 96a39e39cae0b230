"""Shared fixtures: synthetic ridge images, masks and labelled feature sets."""

import math
import os

import numpy as np
import pytest

from livqual.evaluation import FeatureSet
from livqual.image import GrayImage, Mask, block_partition
from livqual.quality import N_FEATURES

FULL_ORACLES = os.environ.get("LIVQUAL_FULL_ORACLES") == "1"


def oracle_count(reduced: int, full: int) -> int:
    """Case count for heavy property checks; LIVQUAL_FULL_ORACLES=1 runs the full count."""
    return full if FULL_ORACLES else reduced


def stripe_pixels(size=256, angle=0.0, frequency=0.1, amplitude=60.0, background=128.0, phase=0.3):
    """Parallel sinusoidal ridges running along ``angle`` over the whole raster."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    t = -xs * math.sin(angle) + ys * math.cos(angle)
    values = background + amplitude * np.sin(2 * np.pi * frequency * t + phase)
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_stripes():
    def _make(size=256, angle=0.0, frequency=0.1, amplitude=60.0, background=128.0, phase=0.3):
        return GrayImage(stripe_pixels(size, angle, frequency, amplitude, background, phase), source="stripes")
    return _make


@pytest.fixture
def stripes(make_stripes):
    return make_stripes()


@pytest.fixture
def flat_image():
    return GrayImage(np.full((256, 256), 128, dtype=np.uint8), source="flat")


@pytest.fixture
def full_mask():
    def _full(image, block_size=32):
        return Mask.full(image, block_partition(image, block_size))
    return _full


@pytest.fixture
def make_feature_set(rng):
    """Two Gaussian classes; ``shift`` separates the class means along every feature."""
    def _make(n_real=20, n_fake=20, shift=3.0, sensor="synthetic", split="dev", spread=1.0):
        real = rng.normal(shift, spread, size=(n_real, N_FEATURES))
        fake = rng.normal(0.0, spread, size=(n_fake, N_FEATURES))
        labels = ["real"] * n_real + ["fake"] * n_fake
        return FeatureSet.from_arrays(np.vstack([real, fake]), labels, sensor=sensor, split=split)
    return _make


@pytest.fixture
def informative_feature_set(rng):
    """Only feature 0 separates the classes; the other nine are noise."""
    def _make(n_per_class=10):
        x = rng.normal(0.0, 1.0, size=(2 * n_per_class, N_FEATURES))
        x[:n_per_class, 0] = 5.0 + rng.normal(0.0, 0.1, n_per_class)
        x[n_per_class:, 0] = rng.normal(0.0, 0.1, n_per_class)
        labels = ["real"] * n_per_class + ["fake"] * n_per_class
        return FeatureSet.from_arrays(x, labels, sensor="synthetic", split="dev")
    return _make
