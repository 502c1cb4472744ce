"""Norm clipping of stochastic gradients: min{1, level / ||g||} * g."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ClippingError(ValueError):
    """Raised for non-finite gradients or a non-positive clipping level."""


@dataclass(frozen=True, eq=False)
class ClipReport:
    clipped_vector: np.ndarray
    was_clipped: bool
    input_norm: float
    level: float


def _check_level(level: float) -> float:
    level = float(level)
    if not (level > 0 and np.isfinite(level)):
        raise ClippingError(f"Уровень клиппинга должен быть положительным и конечным, получено {level}")
    return level


def clip(g: Sequence[float] | np.ndarray, level: float) -> ClipReport:
    """Clip ``g`` to norm at most ``level``; the zero vector is returned unchanged."""
    level = _check_level(level)
    vector = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(vector)):
        raise ClippingError("Градиент содержит нечисловые компоненты")

    input_norm = float(np.linalg.norm(vector))
    if input_norm <= level:
        return ClipReport(clipped_vector=vector.copy(), was_clipped=False, input_norm=input_norm, level=level)

    scale = level / input_norm
    clipped = vector * scale
    # Rounding may leave the norm an ulp above the level; shrink until it is not.
    while float(np.linalg.norm(clipped)) > level:
        scale = float(np.nextafter(scale, 0.0))
        clipped = vector * scale
    return ClipReport(clipped_vector=clipped, was_clipped=True, input_norm=input_norm, level=level)


def clip_rows(gradients: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip every row of ``gradients``; returns (clipped rows, was_clipped mask)."""
    level = _check_level(level)
    rows = np.asarray(gradients, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise ClippingError("Градиенты содержат нечисловые компоненты")
    norms = np.linalg.norm(rows, axis=1)
    mask = norms > level
    scales = np.ones_like(norms)
    scales[mask] = level / norms[mask]
    return rows * scales[:, None], mask
