"""Environment-driven settings shared by the simulator and the CLI."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from logger import RUNTIME_DIR, logger


load_dotenv()

DEFAULT_MAX_WORKERS = 1
DEFAULT_PROGRESS_EVERY = 5000
DEFAULT_OUT_DIR = RUNTIME_DIR / "results"


def parse_bool(value: Optional[str]) -> Optional[bool]:
    normalized = str(value or "").strip().lower()
    if not normalized:
        return None
    if normalized in {"1", "true", "yes", "y", "on"}:
        return True
    if normalized in {"0", "false", "no", "n", "off"}:
        return False
    return None


def env_flag(name: str, default: bool = False) -> bool:
    parsed = parse_bool(os.getenv(name))
    return default if parsed is None else parsed


def env_int(name: str, default: int, minimum: int = 1) -> int:
    raw_value = str(os.getenv(name) or "").strip()
    if not raw_value:
        return default
    try:
        parsed = int(raw_value)
    except ValueError:
        logger.warning("Переменная окружения %s=%r некорректна, используем %s", name, raw_value, default)
        return default
    return parsed if parsed >= minimum else default


def resolve_max_workers(explicit_max_workers: Optional[int] = None) -> int:
    """Worker count for client updates and sweep points: argument, then env, then 1."""
    if explicit_max_workers is not None:
        return max(1, int(explicit_max_workers))
    return env_int("FEDSMD_MAX_WORKERS", DEFAULT_MAX_WORKERS)


def progress_every() -> int:
    return env_int("FEDSMD_PROGRESS_EVERY", DEFAULT_PROGRESS_EVERY)


def default_out_dir() -> Path:
    raw_value = str(os.getenv("FEDSMD_OUT_DIR") or "").strip()
    return Path(raw_value) if raw_value else DEFAULT_OUT_DIR
