"""Exception hierarchy shared by every livqual module."""

from __future__ import annotations

from typing import Any, Optional


class LivQualError(Exception):
    """Base class. ``source`` names the image or dataset that failed, if known."""

    def __init__(self, message: str, source: Optional[str] = None):
        self.message = message
        self.source = source
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.source:
            return f"{self.message} [{self.source}]"
        return self.message

    def with_source(self, source: str) -> "LivQualError":
        self.source = source
        self.args = (str(self),)
        return self


# ---------------------------------------------------------------------------
# Images and preprocessing
# ---------------------------------------------------------------------------

class InvalidImage(LivQualError):
    pass


class BlockSizeError(LivQualError):
    pass


class InvalidParams(LivQualError):
    pass


# ---------------------------------------------------------------------------
# Quality measures
# ---------------------------------------------------------------------------

class EmptyForeground(LivQualError):
    pass


class ForegroundTooSmall(LivQualError):
    pass


class NoComparableBlocks(LivQualError):
    pass


# ---------------------------------------------------------------------------
# Classifier, selection, evaluation
# ---------------------------------------------------------------------------

class InsufficientSamples(LivQualError):
    pass


class EmptyMask(LivQualError):
    pass


class ModelDimensionMismatch(LivQualError):
    pass


class ModelFormatError(LivQualError):
    pass


class LengthMismatch(LivQualError):
    pass


class SingleClassInput(LivQualError):
    """Raised when one class is absent; ``partial`` holds the rates that are defined."""

    def __init__(self, message: str, partial: Any = None, source: Optional[str] = None):
        self.partial = partial
        super().__init__(message, source)


class ManifestError(LivQualError):
    pass


class MissingAttribute(LivQualError):
    pass


# ---------------------------------------------------------------------------
# Fixtures and configuration
# ---------------------------------------------------------------------------

class InvalidSpec(LivQualError):
    pass


class ConfigError(LivQualError):
    pass
