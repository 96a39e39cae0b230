"""
Batch feature extraction and the CSV/JSON files passed between commands.

    features.csv   path,label,sensor,split,q_ocl,...,q_var
    ranking.csv    mask_bits,cardinality,ace,flr,ffr      (best first)
    curve.csv      cardinality,mask_bits,ace
    subset.json    {"sensor", "mask_bits", "loo_ace", "loo_flr", "loo_ffr"}
    decisions.csv  path,label,predicted,score
    report.csv     sensor,stage,flr,ffr,ace

Floats are written with ``%.9g`` so reruns produce identical files.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from .classifier import Label, LivenessDecision, bits_to_mask, parse_label
from .config import DEFAULT_CONFIG, LivQualConfig
from .errors import LivQualError, ManifestError
from .evaluation import CrossValReport, DatasetManifest, FeatureSet
from .image import load_image
from .preprocessing import dump_mask_pgm, dump_orientation_csv, estimate_orientation, segment_foreground
from .quality import FEATURE_NAMES, QualityVector, extract_quality_vector
from .selection import SubsetScore

logger = logging.getLogger(__name__)

FEATURE_HEADER = ("path", "label", "sensor", "split") + FEATURE_NAMES
RANKING_HEADER = ("mask_bits", "cardinality", "ace", "flr", "ffr")
CURVE_HEADER = ("cardinality", "mask_bits", "ace")
DECISIONS_HEADER = ("path", "label", "predicted", "score")
REPORT_HEADER = ("sensor", "stage", "flr", "ffr", "ace")

PathLike = Union[str, Path]


def fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.9g}"


# ===========================================================================
# Batch extraction
# ===========================================================================

class ExtractionItem(NamedTuple):
    path: Path
    label: Optional[Label] = None
    sensor: str = ""
    split: str = ""
    name: Optional[str] = None  # path as written in the features file

    @property
    def display(self) -> str:
        return self.name or str(self.path)


class FeatureRow(NamedTuple):
    path: str
    label: Optional[Label]
    sensor: str
    split: str
    vector: QualityVector


def items_from_manifest(manifest: DatasetManifest, sensor: Optional[str] = None) -> list[ExtractionItem]:
    return [
        ExtractionItem(manifest.image_path(row), row.label, row.sensor, row.split.value, row.path)
        for row in manifest.rows
        if sensor is None or row.sensor == sensor
    ]


IMAGE_SUFFIXES = (".pgm", ".png")


def items_from_input(path: PathLike, sensor: str = "") -> list[ExtractionItem]:
    """One item for a file, or every PGM/PNG directly inside a directory in name order."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        files = [path]
    return [ExtractionItem(p, None, sensor, "", str(p)) for p in files]


def _extract_one(item: ExtractionItem, config: LivQualConfig, debug_dir: Optional[Path]):
    try:
        image = load_image(item.path)
        vector = extract_quality_vector(image, config, source=item.display)
        if debug_dir is not None:
            _dump_debug(image, config, debug_dir)
        return vector
    except LivQualError as exc:
        return exc


def _dump_debug(image, config: LivQualConfig, debug_dir: Path) -> None:
    stem = Path(image.source or "image").stem
    mask = segment_foreground(image, config.gabor, config.block_size)
    dump_mask_pgm(mask, debug_dir / f"{stem}_mask.pgm")
    dump_orientation_csv(estimate_orientation(image, mask.grid, mask), debug_dir / f"{stem}_orientation.csv")


def extract_batch(
    items: Sequence[ExtractionItem],
    config: LivQualConfig = DEFAULT_CONFIG,
    workers: int = 1,
    progress: bool = False,
    debug_dir: Optional[PathLike] = None,
) -> tuple[list[FeatureRow], list[tuple[str, LivQualError]]]:
    """Quality vectors in input order; failures are logged and returned, never raised."""
    debug = Path(debug_dir) if debug_dir is not None else None
    if debug is not None:
        debug.mkdir(parents=True, exist_ok=True)

    rows: list[FeatureRow] = []
    failures: list[tuple[str, LivQualError]] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(lambda item: _extract_one(item, config, debug), items)
        for item, result in tqdm(zip(items, results), total=len(items), desc="extract", unit="img", disable=not progress):
            if isinstance(result, LivQualError):
                logger.warning("skipping %s: %s", item.display, result.message)
                failures.append((item.display, result))
                continue
            for flag in sorted(result.flags):
                logger.info("%s: %s", item.display, flag)
            rows.append(FeatureRow(item.display, item.label, item.sensor, item.split, result))
    logger.info("extracted %d of %d images", len(rows), len(items))
    return rows, failures


# ===========================================================================
# Feature CSV
# ===========================================================================

def write_features(rows: Iterable[FeatureRow], path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_HEADER)
        for row in rows:
            writer.writerow(
                [row.path, row.label.value if row.label else "", row.sensor, row.split]
                + [fmt(v) for v in row.vector.as_array()]
            )
    return path


def read_features(path: PathLike) -> list[FeatureRow]:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ManifestError(f"cannot read features: {exc}", source=str(path)) from exc
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FEATURE_HEADER:
            raise ManifestError(f"expected header {','.join(FEATURE_HEADER)}", source=str(path))
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            try:
                label = parse_label(raw["label"]) if raw["label"] else None
                vector = QualityVector.from_array([float(raw[name]) for name in FEATURE_NAMES])
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"line {lineno}: {exc}", source=str(path)) from exc
            rows.append(FeatureRow(raw["path"], label, raw["sensor"], raw["split"], vector))
    if not rows:
        raise ManifestError("features file has no rows", source=str(path))
    return rows


def rows_to_feature_set(rows: Sequence[FeatureRow], source: Optional[str] = None) -> FeatureSet:
    unlabeled = [r.path for r in rows if r.label is None]
    if unlabeled:
        raise ManifestError(f"{len(unlabeled)} rows have no label (first: {unlabeled[0]})", source=source)
    return FeatureSet(
        np.array([r.vector.as_array() for r in rows]),
        np.array([r.label is Label.REAL for r in rows], dtype=bool),
        paths=tuple(r.path for r in rows),
        sensors=tuple(r.sensor for r in rows),
        splits=tuple(r.split for r in rows),
    )


def read_feature_set(path: PathLike) -> FeatureSet:
    return rows_to_feature_set(read_features(path), source=str(path))


# ===========================================================================
# Selection outputs
# ===========================================================================

def write_ranking(ranking: Sequence[SubsetScore], path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RANKING_HEADER)
        for s in ranking:
            writer.writerow([s.bits, s.cardinality, fmt(s.loo_ace), fmt(s.loo_flr), fmt(s.loo_ffr)])
    return path


def write_curve(curve: Sequence[SubsetScore], path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for s in curve:
            writer.writerow([s.cardinality, s.bits, fmt(s.loo_ace)])
    return path


class SubsetFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sensor: str
    mask_bits: str = Field(pattern=r"^[01]{10}$")
    loo_ace: float
    loo_flr: float
    loo_ffr: float

    @property
    def mask(self) -> int:
        return bits_to_mask(self.mask_bits)

    @classmethod
    def from_score(cls, sensor: str, score: SubsetScore) -> "SubsetFile":
        return cls(sensor=sensor, mask_bits=score.bits, loo_ace=score.loo_ace,
                   loo_flr=score.loo_flr, loo_ffr=score.loo_ffr)

    def to_score(self) -> SubsetScore:
        return SubsetScore(mask=self.mask, cardinality=self.mask_bits.count("1"),
                           loo_ace=self.loo_ace, loo_flr=self.loo_flr, loo_ffr=self.loo_ffr)


def write_subset(subset: SubsetFile, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(subset.model_dump_json(indent=2) + "\n")
    return path


def read_subset(path: PathLike) -> SubsetFile:
    path = Path(path)
    try:
        return SubsetFile.model_validate(json.loads(path.read_text()))
    except OSError as exc:
        raise ManifestError(f"cannot read subset file: {exc}", source=str(path)) from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ManifestError(f"malformed subset file: {exc}", source=str(path)) from exc


def parse_mask_option(value: str) -> int:
    """A subset given on the command line: a subset.json path, a bit string or comma-separated feature names."""
    value = value.strip()
    if value.endswith(".json") or Path(value).is_file():
        return read_subset(value).mask
    if len(value) == len(FEATURE_NAMES) and set(value) <= {"0", "1"}:
        return bits_to_mask(value)
    names = [n.strip() for n in value.split(",") if n.strip()]
    unknown = [n for n in names if n not in FEATURE_NAMES]
    if unknown or not names:
        raise ValueError(f"unknown features {unknown or value!r}; expected bits or names from {', '.join(FEATURE_NAMES)}")
    return sum(1 << FEATURE_NAMES.index(n) for n in names)


# ===========================================================================
# Decisions and reports
# ===========================================================================

def write_decisions(
    paths: Sequence[str],
    decisions: Sequence[LivenessDecision],
    path: PathLike,
    labels: Optional[Sequence[Optional[Label]]] = None,
) -> Path:
    path = Path(path)
    labels = labels or [None] * len(paths)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISIONS_HEADER)
        for name, decision, truth in zip(paths, decisions, labels):
            writer.writerow([name, truth.value if truth else "", decision.label.value, fmt(decision.score)])
    return path


def read_decisions(path: PathLike) -> tuple[list[Label], list[Label]]:
    """(true labels, predicted labels) from a decisions CSV; every row needs both."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ManifestError(f"cannot read decisions: {exc}", source=str(path)) from exc
    truth, predicted = [], []
    with fh:
        reader = csv.DictReader(fh)
        if not {"label", "predicted"} <= set(reader.fieldnames or ()):
            raise ManifestError("decisions file needs label and predicted columns", source=str(path))
        for lineno, raw in enumerate(reader, start=2):
            try:
                truth.append(parse_label(raw["label"]))
                predicted.append(parse_label(raw["predicted"]))
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {exc}", source=str(path)) from exc
    return truth, predicted


def write_report_csv(reports: Sequence[CrossValReport], path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in reports:
            writer.writerow([r.sensor, "1", fmt(r.flr1), fmt(r.ffr1), fmt(r.ace1)])
            writer.writerow([r.sensor, "2", fmt(r.flr2), fmt(r.ffr2), fmt(r.ace2)])
            writer.writerow([r.sensor, "final", "", "", fmt(r.final_ace)])
    return path
