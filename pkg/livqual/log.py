"""Logging setup for the CLI. Library modules only call ``logging.getLogger(__name__)``."""

from __future__ import annotations

import logging
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
_HANDLER_NAME = "livqual"


def configure_logging(level: Optional[str] = None, verbosity: int = 0) -> logging.Logger:
    """Install one stream handler on the ``livqual`` logger.

    ``verbosity`` (from ``-v``/``-q``) shifts the base level by one step per count.
    Calling it again replaces the handler instead of stacking a second one.
    """
    base = logging.getLevelName((level or "WARNING").upper())
    if not isinstance(base, int):
        base = logging.WARNING
    resolved = min(logging.CRITICAL, max(logging.DEBUG, base - 10 * verbosity))

    root = logging.getLogger("livqual")
    for handler in list(root.handlers):
        if handler.get_name() == _HANDLER_NAME:
            root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
    root.addHandler(handler)
    root.setLevel(resolved)
    return root
