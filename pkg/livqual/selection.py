"""
Exhaustive feature-subset search scored by leave-one-out ACE.

Every one of the 1,023 non-empty masks over the ten quality measures is
scored on the development set. Each fold refits normalization and the
discriminant without the held-out sample. The ranking is sorted by
(ACE, subset size, mask value), a total order, so serial and parallel runs
give the same list.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .classifier import FULL_MASK, check_mask, discriminant, fit_arrays, mask_indices, mask_names, mask_to_bits
from .config import DEFAULT_CONFIG, EpsilonPolicy, LivQualConfig
from .errors import InsufficientSamples, LengthMismatch
from .evaluation import CrossValReport, FeatureSet, report_from_counts
from .quality import N_FEATURES

logger = logging.getLogger(__name__)

ALL_MASKS = range(1, FULL_MASK + 1)


class SubsetScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    mask: int = Field(ge=1, le=FULL_MASK)
    cardinality: int = Field(ge=1, le=N_FEATURES)
    loo_ace: float
    loo_flr: float
    loo_ffr: float

    @property
    def bits(self) -> str:
        return mask_to_bits(self.mask)

    @property
    def names(self) -> list[str]:
        return mask_names(self.mask)

    def sort_key(self) -> tuple[float, int, int]:
        return (self.loo_ace, self.cardinality, self.mask)


class SelectionResult(NamedTuple):
    best: SubsetScore
    ranking: list[SubsetScore]


# ===========================================================================
# Leave-one-out
# ===========================================================================

def loo_predictions(x: np.ndarray, is_real: np.ndarray, epsilon: EpsilonPolicy = EpsilonPolicy()) -> np.ndarray:
    """Held-out real/fake prediction for every row of an already-subset matrix."""
    n = x.shape[0]
    predicted = np.empty(n, dtype=bool)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        keep[i] = False
        params = fit_arrays(x[keep], is_real[keep], epsilon)
        keep[i] = True
        w, b = discriminant(params.covariance, params.mu_real, params.mu_fake)
        score = float(((x[i] - params.mean) / params.std) @ w + b)
        predicted[i] = score > 0
    return predicted


def _check_devset(devset: FeatureSet) -> None:
    if devset.n_real < 3 or devset.n_fake < 3:
        raise InsufficientSamples(
            f"leave-one-out needs >= 3 samples per class, got {devset.n_real} real and {devset.n_fake} fake"
        )


def _score_arrays(features: np.ndarray, is_real: np.ndarray, mask: int, epsilon: EpsilonPolicy) -> SubsetScore:
    predicted = loo_predictions(features[:, mask_indices(mask)], is_real, epsilon)
    report = report_from_counts(
        n_real=int(is_real.sum()),
        n_fake=int((~is_real).sum()),
        reals_as_fake=int((is_real & ~predicted).sum()),
        fakes_as_real=int((~is_real & predicted).sum()),
    )
    return SubsetScore(
        mask=mask,
        cardinality=len(mask_indices(mask)),
        loo_ace=report.ace,
        loo_flr=report.flr,
        loo_ffr=report.ffr,
    )


def loo_ace(devset: FeatureSet, subset_mask: int, config: LivQualConfig = DEFAULT_CONFIG) -> SubsetScore:
    _check_devset(devset)
    return _score_arrays(devset.features, devset.is_real, check_mask(subset_mask), config.epsilon)


# ===========================================================================
# Exhaustive search
# ===========================================================================

# Worker-process state, set once per process by the pool initializer.
_WORKER_DATA: Optional[tuple[np.ndarray, np.ndarray, EpsilonPolicy]] = None


def _init_worker(features: np.ndarray, is_real: np.ndarray, epsilon: EpsilonPolicy) -> None:
    global _WORKER_DATA
    _WORKER_DATA = (features, is_real, epsilon)


def _score_in_worker(mask: int) -> SubsetScore:
    features, is_real, epsilon = _WORKER_DATA
    return _score_arrays(features, is_real, mask, epsilon)


def rank_scores(scores: Sequence[SubsetScore]) -> list[SubsetScore]:
    return sorted(scores, key=SubsetScore.sort_key)


def exhaustive_select(
    devset: FeatureSet,
    sensor: str,
    config: LivQualConfig = DEFAULT_CONFIG,
    workers: int = 1,
    progress: bool = False,
) -> SelectionResult:
    _check_devset(devset)
    masks = list(ALL_MASKS)
    bar = tqdm(total=len(masks), desc=f"subsets {sensor}", unit="mask", disable=not progress)
    scores: list[SubsetScore] = []
    try:
        if workers <= 1:
            for mask in masks:
                scores.append(_score_arrays(devset.features, devset.is_real, mask, config.epsilon))
                bar.update()
        else:
            with ProcessPoolExecutor(
                max_workers=workers,
                initializer=_init_worker,
                initargs=(devset.features, devset.is_real, config.epsilon),
            ) as pool:
                for score in pool.map(_score_in_worker, masks, chunksize=16):
                    scores.append(score)
                    bar.update()
    finally:
        bar.close()

    ranking = rank_scores(scores)
    best = ranking[0]
    logger.info(
        "%s: best subset %s (%s) LOO ACE %.3f%% over %d samples",
        sensor, best.bits, ",".join(best.names), best.loo_ace, len(devset),
    )
    return SelectionResult(best, ranking)


def best_by_cardinality(ranking: Sequence[SubsetScore]) -> list[SubsetScore]:
    """Best subset of each size 1..10, for the ACE-versus-size curve."""
    best: dict[int, SubsetScore] = {}
    for score in ranking:
        current = best.get(score.cardinality)
        if current is None or score.sort_key() < current.sort_key():
            best[score.cardinality] = score
    missing = [k for k in range(1, N_FEATURES + 1) if k not in best]
    if missing:
        raise LengthMismatch(f"ranking has no subsets of size {missing}; pass the complete ranking")
    return [best[k] for k in range(1, N_FEATURES + 1)]


def training_gap(score: SubsetScore, report: CrossValReport) -> float:
    """Cross-validated ACE minus the development LOO ACE; large values flag a dev/test mismatch."""
    return report.final_ace - score.loo_ace
