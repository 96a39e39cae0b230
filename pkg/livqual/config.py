"""
Configuration records and runtime settings.

Every threshold used by extraction and training lives in one ``LivQualConfig``
so it can be serialized next to a trained model and replayed bit-exactly.

Config files
------------
    JSON       {"block_size": 32, "gabor": {"sigma": 4.0}}
    YAML       block_size: 32
    key=value  gabor.sigma=4.0      (one per line, ``#`` comments)
    model      an LdaModel JSON file; its embedded config is used

Environment variables
---------------------
    LIVQUAL_THREADS    : cap on worker threads/processes (default: CPU count)
    LIVQUAL_LOG_LEVEL  : DEBUG, INFO, WARNING (default), ERROR
    BRAINTRUST_API_KEY : enables experiment logging in ``crossval``/``pipeline``
    BRAINTRUST_PROJECT : Braintrust project name (default "livqual")
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class GaborBankParams(BaseModel):
    """Gabor filter bank used for foreground segmentation."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_orientations: int = Field(
        default=8, ge=4,
        description="Number of filter orientations, evenly spaced in [0, pi)",
    )
    frequency: float = Field(
        default=0.1, gt=0.0, lt=0.5,
        description="Filter frequency in cycles/pixel (~500 dpi ridge spacing)",
    )
    sigma: float = Field(
        default=4.0, gt=0.0,
        description="Gaussian envelope sigma in pixels",
    )
    segmentation_threshold: float = Field(
        default=0.25, gt=0.0, lt=1.0,
        description="Block is foreground when its response std exceeds this fraction of the strongest block",
    )
    min_response: float = Field(
        default=0.5, ge=0.0,
        description="Absolute floor on the block response std, in gray levels",
    )


class SpectralBandParams(BaseModel):
    """Ring-shaped bands for the power-spectrum energy concentration.

    Bands are equal-width annuli between ``f_low`` and ``f_high``; with the
    defaults the edges fall every 0.4/30 cycles/pixel (0.06, 0.0733, 0.0867,
    0.1, ...). A ridge frequency lying on an edge spreads its windowed peak
    over two neighbouring bands, so q_e drops to about 0.8 for an otherwise
    ideal sinusoid at 0.1 cycles/pixel, against near 1 at a band centre.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_bands: int = Field(default=30, ge=2, description="Number of equal-width annuli")
    f_low: float = Field(default=0.06, gt=0.0, lt=0.5, description="Inner band edge, cycles/pixel")
    f_high: float = Field(default=0.46, gt=0.0, le=0.5, description="Outer band edge, cycles/pixel")
    min_crop: int = Field(default=64, ge=16, description="Minimum foreground bounding box side, pixels")


class ThresholdParams(BaseModel):
    """Thresholds of the block-wise quality measures."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_abrupt: float = Field(
        default=math.pi / 8, gt=0.0, le=math.pi / 2,
        description="Orientation jump (radians) counted as a continuity violation",
    )
    a_min: float = Field(default=8.0, ge=0.0, description="Minimum sinusoid amplitude, gray levels")
    v_min: float = Field(default=25.0, ge=0.0, description="Minimum profile variance, gray levels squared")
    freq_min: float = Field(default=0.04, gt=0.0, lt=0.5, description="Lowest plausible ridge frequency")
    freq_max: float = Field(default=0.25, gt=0.0, lt=0.5, description="Highest plausible ridge frequency")
    unreliable_overlap: float = Field(
        default=0.5, ge=0.0, le=1.0,
        description="Overlap assigned to blocks whose ridge signature is unreliable",
    )


class EpsilonPolicy(BaseModel):
    """Covariance regularization: eps = max(relative * trace / d, floor)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    relative: float = Field(default=1e-6, ge=0.0, description="Multiplier on the mean covariance diagonal")
    floor: float = Field(default=1e-9, gt=0.0, description="Lower bound on eps")


class LivQualConfig(BaseModel):
    """Everything that changes a QualityVector or a trained model."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    block_size: int = Field(default=32, ge=8, description="Square block side in pixels")
    gabor: GaborBankParams = Field(default_factory=GaborBankParams)
    bands: SpectralBandParams = Field(default_factory=SpectralBandParams)
    thresholds: ThresholdParams = Field(default_factory=ThresholdParams)
    epsilon: EpsilonPolicy = Field(default_factory=EpsilonPolicy)

    @model_validator(mode="after")
    def _check_ranges(self) -> "LivQualConfig":
        if self.bands.f_low >= self.bands.f_high:
            raise ValueError("bands.f_low must be below bands.f_high")
        if self.thresholds.freq_min >= self.thresholds.freq_max:
            raise ValueError("thresholds.freq_min must be below thresholds.freq_max")
        return self


DEFAULT_CONFIG = LivQualConfig()


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _coerce(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _parse_key_values(text: str) -> dict:
    data: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _coerce(value)
    return data


def config_from_dict(data: dict) -> LivQualConfig:
    try:
        return LivQualConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config field {field}: {first['msg']}") from exc


def load_config(path: Optional[Union[str, Path]]) -> LivQualConfig:
    """Load a config file; ``None`` returns the defaults."""
    if path is None:
        return DEFAULT_CONFIG
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc

    suffix = path.suffix.lower()
    try:
        if suffix in (".yml", ".yaml"):
            data = yaml.safe_load(text) or {}
        elif suffix == ".json":
            data = json.loads(text)
        else:
            stripped = text.lstrip()
            data = json.loads(text) if stripped.startswith("{") else _parse_key_values(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"malformed config: {exc}", source=str(path)) from exc

    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", source=str(path))
    # A model file carries its extraction config.
    if "schema_version" in data and "config" in data:
        data = data["config"] or {}
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise exc.with_source(str(path))


def save_config(config: LivQualConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(config.model_dump_json(indent=2) + "\n")


# ---------------------------------------------------------------------------
# Runtime settings
# ---------------------------------------------------------------------------

class Settings(BaseModel):
    """Process-level knobs read from the environment (and ``.env``)."""

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: str = Field(default="WARNING")
    braintrust_api_key: Optional[str] = Field(default=None, repr=False)
    braintrust_project: str = Field(default="livqual")

    @classmethod
    def from_env(cls, environ: Optional[dict] = None) -> "Settings":
        env = os.environ if environ is None else environ
        values: dict[str, Any] = {}
        threads = env.get("LIVQUAL_THREADS")
        if threads:
            try:
                values["threads"] = int(threads)
            except ValueError as exc:
                raise ConfigError(f"LIVQUAL_THREADS must be an integer, got {threads!r}") from exc
        if env.get("LIVQUAL_LOG_LEVEL"):
            values["log_level"] = env["LIVQUAL_LOG_LEVEL"].upper()
        if env.get("BRAINTRUST_API_KEY"):
            values["braintrust_api_key"] = env["BRAINTRUST_API_KEY"]
        if env.get("BRAINTRUST_PROJECT"):
            values["braintrust_project"] = env["BRAINTRUST_PROJECT"]
        try:
            return cls(**values)
        except ValidationError as exc:
            raise ConfigError(f"invalid environment settings: {exc.errors()[0]['msg']}") from exc

    def workers(self, requested: Optional[int] = None) -> int:
        if requested is None:
            return self.threads
        return max(1, min(requested, self.threads))
