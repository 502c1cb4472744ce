"""Logger shared by the simulator modules and the CLI.

Records go to a rotating UTF-8 file under the runtime directory. The thread
name is part of every record because client steps and sweep points run on
worker threads (``fedsmd-client-*``, ``fedsmd-sweep-*``).
"""

from __future__ import annotations

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path


RUNTIME_DIR = Path(os.getenv("FEDSMD_RUNTIME_DIR", "runtime"))
LOG_DIR = RUNTIME_DIR / "logs"
LOG_FILE = os.getenv("LOG_FILE", str(LOG_DIR / "fedsmd.log"))
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_MAX_BYTES = 5 * 1024 * 1024
LOG_BACKUP_COUNT = 3
LOG_FORMAT = "%(asctime)s | %(levelname)-7s | %(threadName)s | %(message)s"
CONSOLE_FORMAT = "%(levelname)-7s %(message)s"
_CONSOLE_MARKER = "_fedsmd_console"


logger = logging.getLogger("fedsmd")
logger.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))
logger.propagate = False


class SafeRotatingFileHandler(RotatingFileHandler):
    """Rotating handler that skips a rollover instead of failing the run."""

    def doRollover(self) -> None:
        try:
            super().doRollover()
        except OSError:
            # Another simulator process may still hold fedsmd.log open.
            pass


def _prefer_utf8_streams() -> None:
    # Summaries and errors are printed in Russian.
    for stream in (sys.stdout, sys.stderr):
        reconfigure = getattr(stream, "reconfigure", None)
        if callable(reconfigure):
            try:
                reconfigure(encoding="utf-8", errors="replace")
            except (OSError, ValueError):
                pass


def _file_handler() -> logging.Handler:
    Path(LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
    handler = SafeRotatingFileHandler(
        LOG_FILE,
        maxBytes=LOG_MAX_BYTES,
        backupCount=LOG_BACKUP_COUNT,
        encoding="utf-8",
        delay=True,
    )
    handler.setLevel(logger.level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def attach_console_handler(level: int = logging.INFO) -> logging.Handler:
    """Mirror records to stderr; a second call only adjusts the level."""
    for handler in logger.handlers:
        if getattr(handler, _CONSOLE_MARKER, False):
            handler.setLevel(level)
            return handler
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    setattr(console, _CONSOLE_MARKER, True)
    logger.addHandler(console)
    if level < logger.level:
        logger.setLevel(level)
    return console


_prefer_utf8_streams()

if not logger.handlers:
    logger.addHandler(_file_handler())
