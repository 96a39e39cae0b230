"""
Deterministic synthetic ridge images with known ground truth.

An image is a sinusoidal ridge pattern inside a rectangular patch of whole
blocks on a flat background:

    I(x, y) = background + amplitude * sin(2*pi*phi(x, y) + phase0)

with the phase field

    parallel / rotated   phi = f * (-x sin(a) + y cos(a))
    smooth               the same plus curvature * f * (c1 u^2 + c2 u v + c3 v^2) / size,
                         u, v measured from the image centre

so ridges run along angle ``a`` (image frame, x right, y down) and the smooth
flow bends them by a quadratic. Degradations are applied in the listed order
and the result is rounded and clamped to 8 bits.

Every random draw comes from ``numpy.random.Generator(Philox(seed))`` in a
fixed order (phase offset, flow coefficients, then each degradation), so a
(seed, spec) pair always gives the same bytes.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import ndimage as ndi
from tqdm import tqdm

from .classifier import Label
from .errors import InvalidSpec
from .evaluation import DatasetManifest, ManifestRow, Split, write_manifest
from .image import GrayImage, save_image
from .preprocessing import wrap_angle

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------

class GaussianBlur(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["gaussian_blur"] = "gaussian_blur"
    sigma: float = Field(gt=0.0)


class AdditiveNoise(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["additive_noise"] = "additive_noise"
    sigma: float = Field(ge=0.0)


class ContrastScale(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["contrast_scale"] = "contrast_scale"
    factor: float = Field(ge=0.0, description="Multiplier on the deviation from the background level")


class BlockFlatten(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["block_flatten"] = "block_flatten"
    fraction: float = Field(ge=0.0, le=1.0, description="Share of patch blocks set to the background level")


Degradation = Annotated[
    Union[GaussianBlur, AdditiveNoise, ContrastScale, BlockFlatten],
    Field(discriminator="kind"),
]


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    size: int = Field(default=256, ge=32, description="Square image side in pixels")
    frequency: float = Field(default=0.1, gt=0.0, lt=0.5, description="Ridge frequency, cycles/pixel")
    flow: Literal["parallel", "rotated", "smooth"] = "parallel"
    angle: float = Field(default=0.0, description="Ridge direction in radians (rotated and smooth flows)")
    curvature: float = Field(default=0.3, ge=0.0, le=1.0, description="Strength of the smooth flow's bend")
    amplitude: float = Field(default=60.0, ge=0.0)
    background: float = Field(default=128.0, ge=0.0, le=255.0)
    block_size: int = Field(default=32, ge=8)
    patch_margin: int = Field(default=1, ge=0, description="Background blocks around the ridge patch")
    degradations: list[Degradation] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_layout(self) -> "SynthSpec":
        blocks = self.size // self.block_size
        if blocks < 1:
            raise ValueError(f"block_size {self.block_size} exceeds size {self.size}")
        if blocks - 2 * self.patch_margin < 1:
            raise ValueError(f"patch_margin {self.patch_margin} leaves no ridge blocks in a {blocks}x{blocks} grid")
        return self

    @property
    def blocks(self) -> int:
        return self.size // self.block_size


def make_spec(**fields) -> SynthSpec:
    try:
        return SynthSpec(**fields)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "spec"
        raise InvalidSpec(f"invalid synth spec field {where}: {first['msg']}") from exc


class GroundTruth(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_size: int
    theta: list[list[float]] = Field(description="True ridge direction per block (0 off the patch)")
    patch_blocks: list[list[bool]]
    flattened: list[list[bool]]
    foreground_box: tuple[int, int, int, int] = Field(description="(x0, y0, x1, y1) of the ridge patch, end-exclusive")
    clamped_pixels: int = 0

    @property
    def theta_array(self) -> np.ndarray:
        return np.array(self.theta, dtype=np.float64)

    @property
    def patch_array(self) -> np.ndarray:
        return np.array(self.patch_blocks, dtype=bool)

    @property
    def flattened_array(self) -> np.ndarray:
        return np.array(self.flattened, dtype=bool)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _phase_gradient(spec: SynthSpec, coeffs: np.ndarray, x: np.ndarray, y: np.ndarray):
    f, a = spec.frequency, spec.angle
    gx = np.full(np.broadcast(x, y).shape, -f * math.sin(a))
    gy = np.full(gx.shape, f * math.cos(a))
    if spec.flow == "smooth":
        c = spec.size / 2.0
        u, v = x - c, y - c
        k = spec.curvature * f / spec.size
        gx = gx + k * (2 * coeffs[0] * u + coeffs[1] * v)
        gy = gy + k * (coeffs[1] * u + 2 * coeffs[2] * v)
    return gx, gy


def _phase(spec: SynthSpec, coeffs: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    f, a = spec.frequency, spec.angle
    phi = f * (-x * math.sin(a) + y * math.cos(a))
    if spec.flow == "smooth":
        c = spec.size / 2.0
        u, v = x - c, y - c
        phi = phi + spec.curvature * f * (coeffs[0] * u * u + coeffs[1] * u * v + coeffs[2] * v * v) / spec.size
    return phi


def _true_theta(spec: SynthSpec, coeffs: np.ndarray) -> np.ndarray:
    n, b = spec.blocks, spec.block_size
    centres = np.arange(n) * b + (b - 1) / 2.0
    cx, cy = np.meshgrid(centres, centres)
    if spec.flow != "smooth":
        return np.full((n, n), float(wrap_angle(np.array(spec.angle))))
    gx, gy = _phase_gradient(spec, coeffs, cx, cy)
    return wrap_angle(np.arctan2(gy, gx) + np.pi / 2)


def generate(spec: SynthSpec) -> tuple[GrayImage, GroundTruth]:
    rng = np.random.Generator(np.random.Philox(spec.seed))
    phase0 = rng.uniform(0.0, 2 * np.pi)
    coeffs = rng.uniform(-1.0, 1.0, size=3)

    n, b, m = spec.blocks, spec.block_size, spec.patch_margin
    patch = np.zeros((n, n), dtype=bool)
    patch[m:n - m, m:n - m] = True
    box = (m * b, m * b, (n - m) * b, (n - m) * b)

    ys, xs = np.mgrid[0:spec.size, 0:spec.size].astype(np.float64)
    ridges = spec.amplitude * np.sin(2 * np.pi * _phase(spec, coeffs, xs, ys) + phase0)
    inside = np.zeros((spec.size, spec.size), dtype=bool)
    inside[box[1]:box[3], box[0]:box[2]] = True
    values = spec.background + np.where(inside, ridges, 0.0)

    flattened = np.zeros((n, n), dtype=bool)
    for step in spec.degradations:
        if isinstance(step, GaussianBlur):
            values = ndi.gaussian_filter(values, step.sigma, mode="reflect")
        elif isinstance(step, AdditiveNoise):
            values = values + rng.normal(0.0, step.sigma, size=values.shape)
        elif isinstance(step, ContrastScale):
            values = spec.background + step.factor * (values - spec.background)
        elif isinstance(step, BlockFlatten):
            candidates = np.flatnonzero(patch & ~flattened)
            count = math.floor(step.fraction * int(patch.sum()))
            count = min(count, candidates.size)
            chosen = rng.choice(candidates, size=count, replace=False) if count else np.array([], dtype=int)
            for index in chosen:
                row, col = divmod(int(index), n)
                values[row * b:(row + 1) * b, col * b:(col + 1) * b] = spec.background
                flattened[row, col] = True

    rounded = np.rint(values)
    clamped = int(np.count_nonzero((rounded < 0) | (rounded > 255)))
    if clamped:
        logger.debug("seed %d: %d pixels clamped to [0, 255]", spec.seed, clamped)
    pixels = np.clip(rounded, 0, 255).astype(np.uint8)

    theta = np.where(patch, _true_theta(spec, coeffs), 0.0)
    truth = GroundTruth(
        block_size=b,
        theta=theta.tolist(),
        patch_blocks=patch.tolist(),
        flattened=flattened.tolist(),
        foreground_box=box,
        clamped_pixels=clamped,
    )
    return GrayImage(pixels, source=f"synth:{spec.seed}"), truth


def write_sample(image: GrayImage, truth: GroundTruth, spec: SynthSpec, path: Union[str, Path]) -> Path:
    """PGM image plus a ``.json`` sidecar holding the spec and the ground truth."""
    path = Path(path)
    save_image(image, path)
    sidecar = {"spec": spec.model_dump(mode="json"), "truth": truth.model_dump(mode="json")}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Liveness corpus
# ---------------------------------------------------------------------------

FAKE_DEGRADATIONS = (
    GaussianBlur(sigma=1.5),
    AdditiveNoise(sigma=12.0),
    ContrastScale(factor=0.7),
)


def _child_seed(seed: int, index: int) -> int:
    state = np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def corpus_specs(n_per_class: int, seed: int, size: int = 256) -> list[SynthSpec]:
    """Clean smooth-flow specs, one per real/fake pair, each with its own seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    specs = []
    for k in range(n_per_class):
        specs.append(SynthSpec(
            seed=_child_seed(seed, k),
            size=size,
            frequency=float(rng.uniform(0.08, 0.12)),
            flow="smooth",
            angle=float(rng.uniform(0.0, np.pi)),
            curvature=float(rng.uniform(0.1, 0.4)),
            amplitude=float(rng.uniform(50.0, 70.0)),
            background=float(rng.uniform(110.0, 150.0)),
        ))
    return specs


def make_liveness_corpus(
    n_per_class: int,
    seed: int,
    out_dir: Union[str, Path],
    sensor: str = "synthetic",
    size: int = 256,
    progress: bool = False,
) -> DatasetManifest:
    """Write ``2 * n_per_class`` images under ``out_dir/{dev,test}`` and ``out_dir/manifest.csv``.

    Reals are the clean specs; fakes are the same specs blurred, noised and
    flattened in contrast. The first half of the specs goes to dev, the rest
    to test, so the two splits never share a seed.
    """
    if n_per_class < 10:
        raise InvalidSpec(f"n_per_class must be at least 10, got {n_per_class}")
    out_dir = Path(out_dir)
    for split in Split:
        (out_dir / split.value).mkdir(parents=True, exist_ok=True)

    n_dev = n_per_class // 2
    rows = []
    specs = corpus_specs(n_per_class, seed, size)
    for k, spec in enumerate(tqdm(specs, desc="synth", unit="pair", disable=not progress)):
        split = Split.DEV if k < n_dev else Split.TEST
        for label, variant in (
            (Label.REAL, spec),
            (Label.FAKE, spec.model_copy(update={"degradations": list(FAKE_DEGRADATIONS)})),
        ):
            relative = f"{split.value}/{label.value}_{k:04d}.pgm"
            image, truth = generate(variant)
            write_sample(image, truth, variant, out_dir / relative)
            rows.append(ManifestRow(path=relative, label=label, sensor=sensor, split=split))

    manifest = DatasetManifest(sensors=[sensor], rows=rows, root=str(out_dir))
    write_manifest(manifest, out_dir / "manifest.csv")
    logger.info("wrote %d synthetic images to %s", len(rows), out_dir)
    return manifest


def load_sidecar(path: Union[str, Path]) -> tuple[SynthSpec, GroundTruth]:
    data = json.loads(Path(path).with_suffix(".json").read_text())
    return SynthSpec.model_validate(data["spec"]), GroundTruth.model_validate(data["truth"])


def spec_with(spec: SynthSpec, **changes) -> SynthSpec:
    return make_spec(**{**spec.model_dump(), **changes})

