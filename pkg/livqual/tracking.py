"""
Optional Braintrust logging of cross-validation runs.

One span per sensor: input is the sensor, subset and sample counts, output
is the CrossValReport, and scores are ACE/FLR/FFR as fractions (Braintrust
scores live in 0..1). Without BRAINTRUST_API_KEY every call is a no-op and
a single warning is logged.
"""

from __future__ import annotations

import logging
from typing import Any, Optional

from .config import LivQualConfig, Settings
from .evaluation import CrossValReport, FeatureSet
from .selection import SubsetScore

logger = logging.getLogger(__name__)


class CrossValTracker:
    def __init__(self, settings: Settings, experiment: Optional[str] = None):
        self.project = settings.braintrust_project
        self.experiment = experiment
        self._bt_logger: Any = None
        if not settings.braintrust_api_key:
            logger.warning("BRAINTRUST_API_KEY not set - cross-validation runs will not be tracked")
            return
        from braintrust import init_logger

        self._bt_logger = init_logger(project=self.project, api_key=settings.braintrust_api_key)
        logger.info("Braintrust logger initialized for project %s", self.project)

    @property
    def enabled(self) -> bool:
        return self._bt_logger is not None

    def log_run(
        self,
        report: CrossValReport,
        dev: FeatureSet,
        test: FeatureSet,
        config: LivQualConfig,
        selection: Optional[SubsetScore] = None,
    ) -> Optional[str]:
        """Log one sensor's cross-validation; returns the span id, or None when disabled."""
        if not self.enabled:
            return None
        span = self._bt_logger.start_span(
            name=f"crossval_{report.sensor}",
            input={
                "sensor": report.sensor,
                "subset_bits": report.subset_bits,
                "dev": {"real": dev.n_real, "fake": dev.n_fake},
                "test": {"real": test.n_real, "fake": test.n_fake},
            },
            span_attributes={"type": "eval"},
        )
        scores = {
            "ace": report.final_ace / 100.0,
            "ace1": report.ace1 / 100.0,
            "ace2": report.ace2 / 100.0,
            "flr": (report.flr1 + report.flr2) / 200.0,
            "ffr": (report.ffr1 + report.ffr2) / 200.0,
        }
        metadata = {"config": config.model_dump(mode="json")}
        if self.experiment:
            metadata["experiment"] = self.experiment
        if selection is not None:
            metadata["loo_ace"] = selection.loo_ace
        span.log(output=report.model_dump(mode="json"), scores=scores, metadata=metadata)
        span.end()
        return getattr(span, "id", None)

    def flush(self) -> None:
        if self.enabled:
            self._bt_logger.flush()
