"""Mirror maps, Bregman divergences and the mirror-descent proximal step.

Both shipped maps are 1-strongly convex with respect to the Euclidean norm on
the sets they are paired with: ``euclidean`` (Phi = 1/2 ||x||^2) on any domain,
``entropic`` (Phi = sum x ln x) on the probability simplex. A map that is
s-strongly convex reduces to this case by scaling Phi with 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from domains import DOMAIN_SIMPLEX, Domain, euclidean_project


MIRROR_EUCLIDEAN = "euclidean"
MIRROR_ENTROPIC = "entropic"
SUPPORTED_MIRRORS = {MIRROR_EUCLIDEAN, MIRROR_ENTROPIC}

# Floor for entropic iterates: guards log() against floating-point underflow.
ENTROPY_FLOOR = 1e-300


class GeometryError(ValueError):
    """Raised for points outside the mirror map's domain or unsupported pairings."""


@dataclass(frozen=True)
class MirrorGeometry:
    kind: str
    dimension: int

    def __post_init__(self) -> None:
        if self.kind not in SUPPORTED_MIRRORS:
            raise GeometryError(f"Неизвестное зеркальное отображение: {self.kind!r}")
        if self.dimension < 1:
            raise GeometryError(f"Размерность должна быть положительной, получено {self.dimension}")


def euclidean(dimension: int) -> MirrorGeometry:
    return MirrorGeometry(kind=MIRROR_EUCLIDEAN, dimension=dimension)


def negative_entropy(dimension: int) -> MirrorGeometry:
    return MirrorGeometry(kind=MIRROR_ENTROPIC, dimension=dimension)


def check_pairing(geom: MirrorGeometry, domain: Domain) -> None:
    """Reject (geometry, domain) pairs the mirror step has no exact solver for."""
    if geom.dimension != domain.dimension:
        raise GeometryError(
            f"Размерность отображения {geom.dimension} не совпадает с размерностью области {domain.dimension}"
        )
    if geom.kind == MIRROR_ENTROPIC and domain.kind != DOMAIN_SIMPLEX:
        raise GeometryError(
            f"Энтропийное отображение поддерживается только на симплексе, получена область {domain.kind!r}"
        )


def _vector(geom: MirrorGeometry, x: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    vector = np.asarray(x, dtype=float)
    if vector.shape != (geom.dimension,):
        raise GeometryError(f"{name}: ожидалась размерность {geom.dimension}, получено {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise GeometryError(f"{name}: вектор содержит нечисловые компоненты")
    return vector


def _nonnegative(vector: np.ndarray, name: str) -> np.ndarray:
    if np.any(vector < 0):
        raise GeometryError(f"{name}: отрицательная компонента вне области энтропии")
    return vector


def _strictly_positive(vector: np.ndarray, name: str) -> np.ndarray:
    if np.any(vector <= 0):
        raise GeometryError(f"{name}: дивергенция не определена при нулевой или отрицательной компоненте")
    return vector


def _xlogx(x: np.ndarray) -> np.ndarray:
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


def potential(geom: MirrorGeometry, x: Sequence[float] | np.ndarray) -> float:
    """Phi(x); the entropic map uses the 0 ln 0 = 0 convention at the boundary."""
    vector = _vector(geom, x, "x")
    if geom.kind == MIRROR_EUCLIDEAN:
        return 0.5 * float(vector @ vector)
    return float(np.sum(_xlogx(_nonnegative(vector, "x"))))


def mirror_gradient(geom: MirrorGeometry, x: Sequence[float] | np.ndarray) -> np.ndarray:
    vector = _vector(geom, x, "x")
    if geom.kind == MIRROR_EUCLIDEAN:
        return vector.copy()
    return 1.0 + np.log(_strictly_positive(vector, "x"))


def bregman(geom: MirrorGeometry, x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """D_Phi(x || y) = Phi(x) - Phi(y) - <grad Phi(y), x - y>."""
    x_vec = _vector(geom, x, "x")
    y_vec = _vector(geom, y, "y")
    if geom.kind == MIRROR_EUCLIDEAN:
        diff = x_vec - y_vec
        return 0.5 * float(diff @ diff)
    _nonnegative(x_vec, "x")
    _strictly_positive(y_vec, "y")
    # Generalized KL: sum x ln(x/y) - x + y; equals KL on the simplex.
    safe_x = np.where(x_vec > 0, x_vec, 1.0)
    log_ratio_terms = np.where(x_vec > 0, x_vec * (np.log(safe_x) - np.log(y_vec)), 0.0)
    return float(np.sum(log_ratio_terms - x_vec + y_vec))


def three_point_residual(
    geom: MirrorGeometry,
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    z: Sequence[float] | np.ndarray,
) -> float:
    """Residual of the three-point identity; zero up to roundoff."""
    x_vec = _vector(geom, x, "x")
    y_vec = _vector(geom, y, "y")
    z_vec = _vector(geom, z, "z")
    inner = float((mirror_gradient(geom, x_vec) - mirror_gradient(geom, y_vec)) @ (y_vec - z_vec))
    combination = bregman(geom, z_vec, x_vec) - bregman(geom, z_vec, y_vec) - bregman(geom, y_vec, x_vec)
    return inner - combination


def mirror_step(
    geom: MirrorGeometry,
    domain: Domain,
    x: Sequence[float] | np.ndarray,
    g: Sequence[float] | np.ndarray,
    alpha: float,
) -> np.ndarray:
    """argmin over the domain of <g, z> + D_Phi(z || x) / alpha."""
    if not alpha > 0:
        raise GeometryError(f"Шаг alpha должен быть положительным, получено {alpha}")
    x_vec = _vector(geom, x, "x")
    g_vec = _vector(geom, g, "g")
    if geom.kind == MIRROR_EUCLIDEAN:
        return euclidean_project(domain, x_vec - alpha * g_vec)

    check_pairing(geom, domain)
    # Shifting g by a constant leaves the normalized update unchanged and keeps exp() <= 1.
    weights = _nonnegative(x_vec, "x") * np.exp(-alpha * (g_vec - g_vec.min()))
    return np.maximum(weights / weights.sum(), ENTROPY_FLOOR)


def optimality_residual(
    geom: MirrorGeometry,
    x: np.ndarray,
    g: np.ndarray,
    alpha: float,
    y: np.ndarray,
    z: np.ndarray,
) -> float:
    """<alpha g + grad Phi(y) - grad Phi(x), z - y>; nonnegative for the exact step."""
    direction = alpha * np.asarray(g, dtype=float) + mirror_gradient(geom, y) - mirror_gradient(geom, x)
    return float(direction @ (np.asarray(z, dtype=float) - np.asarray(y, dtype=float)))
