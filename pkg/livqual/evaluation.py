"""
Datasets, error rates and the two-stage cross-validation protocol.

    FLR  false living rate: percentage of fakes labelled real
    FFR  false fake rate: percentage of reals labelled fake
    ACE  average classification error, (FLR + FFR) / 2

Percentages keep full precision; rounding happens only when printing.

Manifest CSV
------------
    # sensors: biometrika,crossmatch      (optional declaration)
    path,label,sensor,split,material,procedure
    dev/real_0001.png,real,crossmatch,dev,,
    dev/fake_0001.png,fake,crossmatch,dev,gelatin,

``material`` and ``procedure`` are optional columns; empty, "-" or "none"
mean not applicable. Relative paths resolve against the manifest's folder.
Without a ``# sensors:`` line the declared sensors are those used by the rows.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .classifier import Label, LdaModel, LivenessDecision, as_feature_matrix, as_real_flags, classify_many, fit_lda, mask_to_bits
from .config import DEFAULT_CONFIG, LivQualConfig
from .errors import LengthMismatch, ManifestError, MissingAttribute, SingleClassInput

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("path", "label", "sensor", "split")
OPTIONAL_COLUMNS = ("material", "procedure")
_NOT_APPLICABLE = {"", "-", "—", "none", "n/a", "na"}


class Split(str, Enum):
    DEV = "dev"
    TEST = "test"


class Material(str, Enum):
    SILICONE = "silicone"
    GELATIN = "gelatin"
    PLAYDOH = "playdoh"


class Procedure(str, Enum):
    COOPERATIVE = "cooperative"
    NON_COOPERATIVE = "non-cooperative"


GROUPINGS = {"material": Material, "procedure": Procedure}


# ===========================================================================
# Manifest
# ===========================================================================

class ManifestRow(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str = Field(min_length=1)
    label: Label
    sensor: str = Field(min_length=1)
    split: Split
    material: Optional[Material] = None
    procedure: Optional[Procedure] = None

    @field_validator("label", "split", "material", "procedure", mode="before")
    @classmethod
    def _normalize_enum(cls, value):
        if isinstance(value, str):
            value = value.strip().lower()
            if value in _NOT_APPLICABLE:
                return None
        return value

    @field_validator("path", "sensor", mode="before")
    @classmethod
    def _strip(cls, value):
        return value.strip() if isinstance(value, str) else value


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    sensors: list[str]
    rows: list[ManifestRow]
    root: Optional[str] = Field(default=None, description="Folder relative paths resolve against")

    @model_validator(mode="after")
    def _check_rows(self) -> "DatasetManifest":
        seen = set()
        for row in self.rows:
            if row.path in seen:
                raise ValueError(f"duplicate path {row.path!r}")
            seen.add(row.path)
            if row.sensor not in self.sensors:
                raise ValueError(f"sensor {row.sensor!r} of {row.path!r} is not declared ({', '.join(self.sensors)})")
        return self

    def image_path(self, row: ManifestRow) -> Path:
        path = Path(row.path)
        if path.is_absolute() or self.root is None:
            return path
        return Path(self.root) / path

    def select(self, sensor: Optional[str] = None, split: Optional[Split] = None) -> list[ManifestRow]:
        return [
            row for row in self.rows
            if (sensor is None or row.sensor == sensor) and (split is None or row.split == split)
        ]

    def counts(self) -> Counter:
        return Counter((row.sensor, row.split.value, row.label.value) for row in self.rows)

    def attribute_counts(self, attribute: str) -> Counter:
        return Counter(
            (row.sensor, row.split.value, getattr(row, attribute).value)
            for row in self.rows if getattr(row, attribute) is not None
        )

    def summary_lines(self) -> list[str]:
        lines = []
        counts = self.counts()
        materials = self.attribute_counts("material")
        procedures = self.attribute_counts("procedure")
        for sensor in self.sensors:
            for split in Split:
                real = counts[(sensor, split.value, "real")]
                fake = counts[(sensor, split.value, "fake")]
                if not real and not fake:
                    continue
                line = f"{sensor:<12} {split.value:<4} real={real:<5} fake={fake:<5}"
                extras = [
                    f"{value}={count}"
                    for (s, sp, value), count in sorted((materials + procedures).items())
                    if s == sensor and sp == split.value
                ]
                if extras:
                    line += " (" + ", ".join(extras) + ")"
                lines.append(line)
        return lines


def _split_declaration(text: str) -> tuple[Optional[list[str]], str]:
    """Strip leading ``#`` lines, returning any ``# sensors:`` declaration and the CSV body."""
    declared = None
    body = []
    header_seen = False
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if not header_seen and (not stripped or stripped.startswith("#")):
            comment = stripped.lstrip("#").strip()
            if comment.lower().startswith("sensors:"):
                declared = [s.strip() for s in comment.split(":", 1)[1].split(",") if s.strip()]
            continue
        header_seen = True
        body.append(line)
    return declared, "".join(body)


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}", source=str(path)) from exc

    declared, body = _split_declaration(text)
    if not body.strip():
        raise ManifestError("manifest is empty", source=str(path))
    reader = csv.DictReader(io.StringIO(body))
    columns = [c.strip() for c in (reader.fieldnames or [])]
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise ManifestError(f"manifest header lacks {', '.join(missing)}", source=str(path))
    unknown = [c for c in columns if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if unknown:
        raise ManifestError(f"unknown manifest columns {', '.join(unknown)}", source=str(path))

    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if None in raw:
            raise ManifestError(f"line {lineno}: too many fields", source=str(path))
        values = {k.strip(): v for k, v in raw.items()}
        if any(values.get(c) is None for c in REQUIRED_COLUMNS):
            raise ManifestError(f"line {lineno}: too few fields", source=str(path))
        try:
            rows.append(ManifestRow(**{k: v for k, v in values.items() if v is not None}))
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise ManifestError(f"line {lineno}: bad {where}: {first['msg']}", source=str(path)) from exc
    if not rows:
        raise ManifestError("manifest has a header but no rows", source=str(path))

    sensors = declared or list(dict.fromkeys(row.sensor for row in rows))
    try:
        manifest = DatasetManifest(sensors=sensors, rows=rows, root=str(path.parent))
    except ValidationError as exc:
        raise ManifestError(exc.errors()[0]["msg"], source=str(path)) from exc

    for line in manifest.summary_lines():
        logger.info("manifest %s: %s", path.name, line)
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# sensors: {','.join(manifest.sensors)}\n")
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS + OPTIONAL_COLUMNS)
        for row in manifest.rows:
            writer.writerow([
                row.path, row.label.value, row.sensor, row.split.value,
                row.material.value if row.material else "",
                row.procedure.value if row.procedure else "",
            ])
    return path


# ===========================================================================
# Labelled feature sets
# ===========================================================================

@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Quality vectors with labels and the manifest attributes of each sample."""

    features: np.ndarray
    is_real: np.ndarray
    paths: tuple = ()
    sensors: tuple = ()
    splits: tuple = ()
    materials: tuple = ()
    procedures: tuple = ()

    def __post_init__(self) -> None:
        features = as_feature_matrix(self.features)
        is_real = np.asarray(self.is_real, dtype=bool)
        n = features.shape[0]
        if is_real.shape != (n,):
            raise LengthMismatch(f"{n} feature rows but {is_real.size} labels")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "is_real", is_real)
        defaults = {
            "paths": tuple(f"sample_{i:05d}" for i in range(n)),
            "sensors": ("",) * n, "splits": ("",) * n,
            "materials": (None,) * n, "procedures": (None,) * n,
        }
        for name, default in defaults.items():
            value = tuple(getattr(self, name)) or default
            if len(value) != n:
                raise LengthMismatch(f"{name} has {len(value)} entries for {n} samples")
            object.__setattr__(self, name, value)

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray,
        labels: Iterable[Union[str, Label, bool]],
        sensor: str = "",
        split: str = "",
        **attributes: Sequence,
    ) -> "FeatureSet":
        features = as_feature_matrix(features)
        n = features.shape[0]
        return cls(features, as_real_flags(labels), sensors=(sensor,) * n, splits=(split,) * n, **attributes)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_real(self) -> int:
        return int(self.is_real.sum())

    @property
    def n_fake(self) -> int:
        return len(self) - self.n_real

    @property
    def labels(self) -> list[Label]:
        return [Label.REAL if r else Label.FAKE for r in self.is_real]

    def where(self, keep: np.ndarray) -> "FeatureSet":
        idx = np.flatnonzero(np.asarray(keep, dtype=bool))
        return FeatureSet(
            self.features[idx], self.is_real[idx],
            paths=tuple(self.paths[i] for i in idx),
            sensors=tuple(self.sensors[i] for i in idx),
            splits=tuple(self.splits[i] for i in idx),
            materials=tuple(self.materials[i] for i in idx),
            procedures=tuple(self.procedures[i] for i in idx),
        )

    def for_sensor(self, sensor: str) -> "FeatureSet":
        return self.where(np.array([s == sensor for s in self.sensors], dtype=bool))

    def for_split(self, split: Union[str, Split]) -> "FeatureSet":
        split = Split(split).value
        return self.where(np.array([s == split for s in self.splits], dtype=bool))

    def with_attributes(self, manifest: DatasetManifest) -> "FeatureSet":
        """Fill material/procedure from the manifest rows with the same path."""
        by_path = {row.path: row for row in manifest.rows}
        by_resolved = {str(manifest.image_path(row)): row for row in manifest.rows}
        materials, procedures = [], []
        for path in self.paths:
            row = by_path.get(path) or by_resolved.get(path)
            materials.append(row.material.value if row and row.material else None)
            procedures.append(row.procedure.value if row and row.procedure else None)
        return FeatureSet(
            self.features, self.is_real, self.paths, self.sensors, self.splits,
            tuple(materials), tuple(procedures),
        )


# ===========================================================================
# Rates
# ===========================================================================

class EvaluationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_real: int = Field(ge=0)
    n_fake: int = Field(ge=0)
    fakes_as_real: int = Field(ge=0, description="Fakes accepted as real (false living)")
    reals_as_fake: int = Field(ge=0, description="Reals rejected as fake (false fake)")
    flr: Optional[float] = Field(default=None, description="Percent; undefined without fakes")
    ffr: Optional[float] = Field(default=None, description="Percent; undefined without reals")
    ace: Optional[float] = Field(default=None, description="Percent; withheld when a rate is undefined")
    group: Optional[str] = None

    @property
    def confusion(self) -> dict[str, int]:
        return {
            "real_as_real": self.n_real - self.reals_as_fake,
            "real_as_fake": self.reals_as_fake,
            "fake_as_real": self.fakes_as_real,
            "fake_as_fake": self.n_fake - self.fakes_as_real,
        }

    @property
    def n_samples(self) -> int:
        return self.n_real + self.n_fake


def report_from_counts(
    n_real: int, n_fake: int, reals_as_fake: int, fakes_as_real: int, group: Optional[str] = None
) -> EvaluationReport:
    flr = 100.0 * fakes_as_real / n_fake if n_fake else None
    ffr = 100.0 * reals_as_fake / n_real if n_real else None
    ace = (flr + ffr) / 2.0 if flr is not None and ffr is not None else None
    return EvaluationReport(
        n_real=n_real, n_fake=n_fake, fakes_as_real=fakes_as_real, reals_as_fake=reals_as_fake,
        flr=flr, ffr=ffr, ace=ace, group=group,
    )


def _decision_labels(decisions: Iterable[Union[LivenessDecision, Label, str, bool]]) -> np.ndarray:
    return as_real_flags(d.label if isinstance(d, LivenessDecision) else d for d in decisions)


def compute_rates(
    decisions: Sequence[Union[LivenessDecision, Label, str, bool]],
    labels: Sequence[Union[Label, str, bool]],
    strict: bool = True,
) -> EvaluationReport:
    """FLR/FFR/ACE of ``decisions`` against the true ``labels``.

    With only one class present the report carries the defined rate and no ACE;
    ``strict`` raises ``SingleClassInput`` holding that partial report.
    """
    predicted = _decision_labels(decisions)
    truth = as_real_flags(labels)
    if predicted.size != truth.size:
        raise LengthMismatch(f"{predicted.size} decisions for {truth.size} labels")
    if truth.size == 0:
        raise LengthMismatch("no decisions to evaluate")
    report = report_from_counts(
        n_real=int(truth.sum()),
        n_fake=int((~truth).sum()),
        reals_as_fake=int((truth & ~predicted).sum()),
        fakes_as_real=int((~truth & predicted).sum()),
    )
    if report.ace is None and strict:
        missing = "fake" if report.n_fake == 0 else "real"
        raise SingleClassInput(f"no {missing} samples, ACE is undefined", partial=report)
    return report


# ===========================================================================
# Cross-validation protocol
# ===========================================================================

class CrossValReport(BaseModel):
    """Stage 1 trains on dev and tests on test; stage 2 swaps the roles."""
    model_config = ConfigDict(frozen=True)

    sensor: str = ""
    subset_bits: str = ""
    ace1: float
    flr1: float
    ffr1: float
    ace2: float
    flr2: float
    ffr2: float
    final_ace: float


def combine_stages(
    stage1: EvaluationReport,
    stage2: EvaluationReport,
    sensor: str = "",
    subset_bits: str = "",
) -> CrossValReport:
    for n, stage in enumerate((stage1, stage2), start=1):
        if stage.ace is None:
            raise SingleClassInput(f"stage {n} has an undefined ACE", partial=stage)
    return CrossValReport(
        sensor=sensor, subset_bits=subset_bits,
        ace1=stage1.ace, flr1=stage1.flr, ffr1=stage1.ffr,
        ace2=stage2.ace, flr2=stage2.flr, ffr2=stage2.ffr,
        final_ace=(stage1.ace + stage2.ace) / 2.0,
    )


def _stage(train: FeatureSet, evaluate: FeatureSet, subset_mask: int, sensor: str, config: LivQualConfig) -> EvaluationReport:
    model = fit_lda(train.features, train.is_real, subset_mask, sensor, config)
    return compute_rates(classify_many(model, evaluate.features), evaluate.is_real)


def _require_both_classes(dataset: FeatureSet, role: str) -> None:
    if dataset.n_real == 0 or dataset.n_fake == 0:
        raise SingleClassInput(
            f"{role} set needs both classes, has {dataset.n_real} real and {dataset.n_fake} fake"
        )


def cross_validate(
    dev: FeatureSet,
    test: FeatureSet,
    subset_mask: int,
    sensor: str,
    config: LivQualConfig = DEFAULT_CONFIG,
) -> CrossValReport:
    _require_both_classes(dev, "development")
    _require_both_classes(test, "test")
    stage1 = _stage(dev, test, subset_mask, sensor, config)
    stage2 = _stage(test, dev, subset_mask, sensor, config)
    report = combine_stages(stage1, stage2, sensor, mask_to_bits(subset_mask))
    logger.info("%s: ACE1=%.3f ACE2=%.3f final=%.3f", sensor, report.ace1, report.ace2, report.final_ace)
    return report


def summarize_sensors(reports: Mapping[str, CrossValReport]) -> CrossValReport:
    """The "Total" row: each rate averaged over sensors."""
    if not reports:
        raise LengthMismatch("no sensor reports to summarize")
    values = list(reports.values())

    def mean(name: str) -> float:
        return float(np.mean([getattr(r, name) for r in values]))

    ace1, ace2 = mean("ace1"), mean("ace2")
    return CrossValReport(
        sensor="Total",
        ace1=ace1, flr1=mean("flr1"), ffr1=mean("ffr1"),
        ace2=ace2, flr2=mean("flr2"), ffr2=mean("ffr2"),
        final_ace=(ace1 + ace2) / 2.0,
    )


def format_crossval_table(reports: Sequence[CrossValReport]) -> str:
    header = f"{'sensor':<12} {'FLR1/FLR2':>13} {'FFR1/FFR2':>13} {'ACE1/ACE2':>13} {'ACE':>6}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.sensor:<12} {r.flr1:>6.1f}/{r.flr2:<6.1f} {r.ffr1:>6.1f}/{r.ffr2:<6.1f} "
            f"{r.ace1:>6.1f}/{r.ace2:<6.1f} {r.final_ace:>6.1f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Breakdown by fake material or acquisition procedure
# ---------------------------------------------------------------------------

def _group_values(evaluate: FeatureSet, group_by: str) -> list[Optional[str]]:
    if group_by not in GROUPINGS:
        raise MissingAttribute(f"cannot group by {group_by!r} (choose {', '.join(GROUPINGS)})")
    values = list(getattr(evaluate, group_by + "s"))
    fakes_missing = [p for p, v, real in zip(evaluate.paths, values, evaluate.is_real) if not real and v is None]
    if fakes_missing:
        raise MissingAttribute(
            f"{len(fakes_missing)} fake samples have no {group_by} (first: {fakes_missing[0]})"
        )
    return values


def breakdown_report(model: LdaModel, evaluate: FeatureSet, group_by: str) -> list[EvaluationReport]:
    """Per-group FLR over the fakes of each group, all against the shared real FFR."""
    values = _group_values(evaluate, group_by)
    predicted = np.array([d.is_real for d in classify_many(model, evaluate.features)], dtype=bool)
    reals = evaluate.is_real
    n_real = int(reals.sum())
    reals_as_fake = int((reals & ~predicted).sum())

    reports = []
    for group in GROUPINGS[group_by]:
        members = np.array([v == group.value for v in values], dtype=bool) & ~reals
        if not members.any():
            logger.warning("no %s fakes with %s=%s, group omitted", model.sensor, group_by, group.value)
            continue
        reports.append(report_from_counts(
            n_real=n_real,
            n_fake=int(members.sum()),
            reals_as_fake=reals_as_fake,
            fakes_as_real=int((members & predicted).sum()),
            group=group.value,
        ))
    return reports


class GroupCrossVal(BaseModel):
    model_config = ConfigDict(frozen=True)

    group: str
    stage1: Optional[EvaluationReport] = None
    stage2: Optional[EvaluationReport] = None

    @property
    def final_ace(self) -> Optional[float]:
        aces = [s.ace for s in (self.stage1, self.stage2) if s is not None and s.ace is not None]
        return float(np.mean(aces)) if aces else None


def cross_validate_breakdown(
    dev: FeatureSet,
    test: FeatureSet,
    subset_mask: int,
    sensor: str,
    group_by: str,
    config: LivQualConfig = DEFAULT_CONFIG,
) -> list[GroupCrossVal]:
    """Both cross-validation stages, each trained on the full training split and broken down on the other."""
    _require_both_classes(dev, "development")
    _require_both_classes(test, "test")
    stage1 = breakdown_report(fit_lda(dev.features, dev.is_real, subset_mask, sensor, config), test, group_by)
    stage2 = breakdown_report(fit_lda(test.features, test.is_real, subset_mask, sensor, config), dev, group_by)
    first = {r.group: r for r in stage1}
    second = {r.group: r for r in stage2}
    return [
        GroupCrossVal(group=g.value, stage1=first.get(g.value), stage2=second.get(g.value))
        for g in GROUPINGS[group_by]
        if g.value in first or g.value in second
    ]

