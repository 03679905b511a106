"""Logging for the tailoring toolkit.

Every module asks for ``get_logger("<module>")`` once at import time. Loggers are
children of ``tn_tailoring``, each with a single stderr handler, and do not
propagate to the root logger.
"""

from __future__ import annotations

import logging
import os
import sys
from functools import lru_cache

ROOT_LOGGER_NAME = "tn_tailoring"
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

_level_override: int | None = None


def _resolve_level(level_name: str | None) -> int:
    """Map a level name to a logging level, INFO if unknown.

    With no name, a level set through ``set_level`` wins over LOG_LEVEL.
    """
    if level_name is None:
        if _level_override is not None:
            return _level_override
        level_name = os.getenv("LOG_LEVEL", "INFO")
    level = logging.getLevelName(level_name.strip().upper())
    return level if isinstance(level, int) else logging.INFO


def _qualified(name: str) -> str:
    if name == ROOT_LOGGER_NAME or name.startswith(f"{ROOT_LOGGER_NAME}."):
        return name
    return f"{ROOT_LOGGER_NAME}.{name}"


@lru_cache(maxsize=None)
def get_logger(name: str = ROOT_LOGGER_NAME) -> logging.Logger:
    logger = logging.getLogger(_qualified(name))
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(_resolve_level(None))
    return logger


def set_level(level_name: str) -> None:
    """Apply ``--log-level`` to the loggers already created and to later ones."""
    global _level_override
    level = _resolve_level(level_name)
    _level_override = level
    for name in list(logging.root.manager.loggerDict):
        if name == ROOT_LOGGER_NAME or name.startswith(f"{ROOT_LOGGER_NAME}."):
            logging.getLogger(name).setLevel(level)
