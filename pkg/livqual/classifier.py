"""
Two-class linear discriminant over a subset of the quality vector.

Features are z-scored with training statistics, the two classes share one
pooled covariance, priors are equal. The decision is the sign of

    score = x.w + b,  w = inv(S) (mu_real - mu_fake),  b = -0.5 (mu_real + mu_fake).w

and a score of exactly 0 is labelled fake.

Subset masks
------------
Bit i of a mask selects feature i of ``quality.FEATURE_NAMES``. As text a
mask is a 10-character bit string listing feature 0 first, e.g. the mask
0b1011 is "1101000000".
"""

from __future__ import annotations

import json
import logging
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import DEFAULT_CONFIG, EpsilonPolicy, LivQualConfig
from .errors import EmptyMask, InsufficientSamples, ModelDimensionMismatch, ModelFormatError
from .quality import FEATURE_NAMES, FEATURE_ORDER_VERSION, N_FEATURES, QualityVector

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
FULL_MASK = (1 << N_FEATURES) - 1


class Label(str, Enum):
    REAL = "real"
    FAKE = "fake"


def parse_label(value: Union[str, Label, bool]) -> Label:
    if isinstance(value, Label):
        return value
    if isinstance(value, (bool, np.bool_)):
        return Label.REAL if value else Label.FAKE
    try:
        return Label(str(value).strip().lower())
    except ValueError as exc:
        raise ValueError(f"unknown label {value!r} (expected real or fake)") from exc


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def check_mask(mask: int) -> int:
    mask = int(mask)
    if mask == 0:
        raise EmptyMask("feature subset mask selects no feature")
    if not 0 < mask <= FULL_MASK:
        raise EmptyMask(f"mask {mask} is outside 1..{FULL_MASK}")
    return mask


def mask_indices(mask: int) -> list[int]:
    return [i for i in range(N_FEATURES) if mask >> i & 1]


def mask_to_bits(mask: int) -> str:
    return "".join("1" if mask >> i & 1 else "0" for i in range(N_FEATURES))


def bits_to_mask(bits: str) -> int:
    bits = bits.strip()
    if len(bits) != N_FEATURES or set(bits) - {"0", "1"}:
        raise ValueError(f"mask bits must be {N_FEATURES} characters of 0/1, got {bits!r}")
    return sum(1 << i for i, ch in enumerate(bits) if ch == "1")


def mask_names(mask: int) -> list[str]:
    return [FEATURE_NAMES[i] for i in mask_indices(mask)]


def as_feature_matrix(features: Union[np.ndarray, Sequence[QualityVector], Sequence[Sequence[float]]]) -> np.ndarray:
    if isinstance(features, np.ndarray):
        matrix = np.asarray(features, dtype=np.float64)
    else:
        matrix = np.array(
            [f.as_array() if isinstance(f, QualityVector) else np.asarray(f, dtype=np.float64) for f in features],
            dtype=np.float64,
        )
    if matrix.ndim != 2 or matrix.shape[1] != N_FEATURES:
        raise ModelDimensionMismatch(f"expected an (n, {N_FEATURES}) feature matrix, got shape {matrix.shape}")
    return matrix


def as_real_flags(labels: Iterable[Union[str, Label, bool]]) -> np.ndarray:
    return np.array([parse_label(label) is Label.REAL for label in labels], dtype=bool)


# ===========================================================================
# Fitting
# ===========================================================================

class LdaParams(NamedTuple):
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray
    mu_real: np.ndarray
    mu_fake: np.ndarray
    covariance: np.ndarray
    epsilon: float


def _scatter(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    centred = x - mu
    return centred.T @ centred


def fit_arrays(x: np.ndarray, is_real: np.ndarray, epsilon: EpsilonPolicy = EpsilonPolicy()) -> LdaParams:
    """Fit on an already-subset (n, d) matrix. Shared by ``fit_lda`` and leave-one-out scoring."""
    n_real = int(is_real.sum())
    n_fake = int(is_real.size - n_real)
    if n_real < 2 or n_fake < 2:
        raise InsufficientSamples(f"need >= 2 samples per class, got {n_real} real and {n_fake} fake")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    zero_variance = np.ptp(x, axis=0) == 0
    mean = np.where(zero_variance, x[0], mean)
    std = np.where(zero_variance, 1.0, std)
    z = (x - mean) / std

    mu_real = z[is_real].mean(axis=0)
    mu_fake = z[~is_real].mean(axis=0)
    pooled = (_scatter(z[is_real], mu_real) + _scatter(z[~is_real], mu_fake)) / (n_real + n_fake - 2)
    pooled = (pooled + pooled.T) / 2.0
    d = pooled.shape[0]
    eps = max(epsilon.relative * float(np.trace(pooled)) / d, epsilon.floor)
    covariance = pooled + eps * np.eye(d)
    return LdaParams(mean, std, zero_variance, mu_real, mu_fake, covariance, eps)


def discriminant(covariance: np.ndarray, mu_real: np.ndarray, mu_fake: np.ndarray) -> tuple[np.ndarray, float]:
    w = np.linalg.solve(covariance, mu_real - mu_fake)
    b = -0.5 * float((mu_real + mu_fake) @ w)
    return w, b


class LivenessDecision(NamedTuple):
    label: Label
    score: float

    @property
    def is_real(self) -> bool:
        return self.label is Label.REAL


def decide(score: float) -> Label:
    return Label.REAL if score > 0 else Label.FAKE


class LdaModel(BaseModel):
    """Fitted discriminant; immutable and safe to share between threads."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: int = Field(default=MODEL_SCHEMA_VERSION)
    feature_order_version: int = Field(default=FEATURE_ORDER_VERSION)
    sensor: str = Field(description="Sensor the model was trained for")
    subset_mask: str = Field(description="Selected features as a bit string, feature 0 first")
    norm_mean: list[float]
    norm_std: list[float]
    zero_variance: list[bool]
    mu_real: list[float]
    mu_fake: list[float]
    covariance: list[float] = Field(description="Regularized pooled covariance, row-major d*d")
    epsilon: float
    n_real: int = Field(default=0, ge=0)
    n_fake: int = Field(default=0, ge=0)
    config: LivQualConfig = Field(default_factory=lambda: DEFAULT_CONFIG)

    @field_validator("subset_mask")
    @classmethod
    def _valid_bits(cls, value: str) -> str:
        if bits_to_mask(value) == 0:
            raise ValueError("subset selects no feature")
        return value

    @model_validator(mode="after")
    def _check_dimensions(self) -> "LdaModel":
        d = self.dimension
        for name in ("norm_mean", "norm_std", "zero_variance", "mu_real", "mu_fake"):
            if len(getattr(self, name)) != d:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, mask selects {d}")
        if len(self.covariance) != d * d:
            raise ValueError(f"covariance has {len(self.covariance)} entries, expected {d * d}")
        if any(s <= 0 for s in self.norm_std):
            raise ValueError("normalization stds must be positive")
        return self

    @property
    def mask(self) -> int:
        return bits_to_mask(self.subset_mask)

    @property
    def indices(self) -> list[int]:
        return mask_indices(self.mask)

    @property
    def dimension(self) -> int:
        return self.subset_mask.count("1")

    @property
    def covariance_matrix(self) -> np.ndarray:
        d = self.dimension
        return np.array(self.covariance, dtype=np.float64).reshape(d, d)

    @cached_property
    def linear_discriminant(self) -> tuple[np.ndarray, float]:
        return discriminant(
            self.covariance_matrix,
            np.array(self.mu_real, dtype=np.float64),
            np.array(self.mu_fake, dtype=np.float64),
        )

    @property
    def weights(self) -> np.ndarray:
        return self.linear_discriminant[0]

    @property
    def bias(self) -> float:
        return self.linear_discriminant[1]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Z-score full-length feature rows and keep the selected columns."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != N_FEATURES:
            raise ModelDimensionMismatch(f"expected {N_FEATURES} features, got {x.shape[-1]}")
        return (x[..., self.indices] - np.array(self.norm_mean)) / np.array(self.norm_std)

    def scores(self, x: np.ndarray) -> np.ndarray:
        w, b = self.linear_discriminant
        return self.normalize(x) @ w + b


def fit_lda(
    features: Union[np.ndarray, Sequence[QualityVector]],
    labels: Iterable[Union[str, Label, bool]],
    subset_mask: int,
    sensor: str,
    config: LivQualConfig = DEFAULT_CONFIG,
) -> LdaModel:
    subset_mask = check_mask(subset_mask)
    matrix = as_feature_matrix(features)
    is_real = as_real_flags(labels)
    if is_real.size != matrix.shape[0]:
        raise ModelDimensionMismatch(f"{matrix.shape[0]} feature rows but {is_real.size} labels")

    params = fit_arrays(matrix[:, mask_indices(subset_mask)], is_real, config.epsilon)
    for name in np.array(mask_names(subset_mask))[params.zero_variance]:
        logger.warning("feature %s is constant in the %s training set, normalized to 0", name, sensor)

    model = LdaModel(
        sensor=sensor,
        subset_mask=mask_to_bits(subset_mask),
        norm_mean=params.mean.tolist(),
        norm_std=params.std.tolist(),
        zero_variance=params.zero_variance.tolist(),
        mu_real=params.mu_real.tolist(),
        mu_fake=params.mu_fake.tolist(),
        covariance=params.covariance.ravel().tolist(),
        epsilon=params.epsilon,
        n_real=int(is_real.sum()),
        n_fake=int((~is_real).sum()),
        config=config,
    )
    logger.debug("fitted %s model on %s (eps=%.3g)", sensor, mask_names(subset_mask), params.epsilon)
    return model


def classify(model: LdaModel, vector: Union[QualityVector, Sequence[float], np.ndarray]) -> LivenessDecision:
    x = vector.as_array() if isinstance(vector, QualityVector) else np.asarray(vector, dtype=np.float64)
    if x.ndim != 1 or x.size != N_FEATURES:
        raise ModelDimensionMismatch(f"expected a vector of {N_FEATURES} features, got shape {x.shape}")
    score = float(model.scores(x))
    return LivenessDecision(decide(score), score)


def classify_many(model: LdaModel, features: Union[np.ndarray, Sequence[QualityVector]]) -> list[LivenessDecision]:
    scores = model.scores(as_feature_matrix(features))
    return [LivenessDecision(decide(float(s)), float(s)) for s in scores]


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(model: LdaModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(model.model_dump_json(indent=2) + "\n")
    return path


def load_model(path: Union[str, Path]) -> LdaModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ModelFormatError(f"cannot read model: {exc}", source=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model is not valid JSON: {exc}", source=str(path)) from exc
    if not isinstance(data, dict):
        raise ModelFormatError("model file must hold a JSON object", source=str(path))
    version = data.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported model schema_version {version!r} (expected {MODEL_SCHEMA_VERSION})",
            source=str(path),
        )
    if data.get("feature_order_version", FEATURE_ORDER_VERSION) != FEATURE_ORDER_VERSION:
        raise ModelFormatError("model was trained on a different feature order", source=str(path))
    try:
        return LdaModel.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "model"
        raise ModelFormatError(f"invalid model field {where}: {first['msg']}", source=str(path)) from exc
