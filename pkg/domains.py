"""Closed convex decision sets: membership tests and Euclidean projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


DOMAIN_FREE = "free"
DOMAIN_SIMPLEX = "simplex"
DOMAIN_BOX = "box"
DOMAIN_BALL = "ball"
SUPPORTED_DOMAINS = {DOMAIN_FREE, DOMAIN_SIMPLEX, DOMAIN_BOX, DOMAIN_BALL}

MEMBERSHIP_TOLERANCE = 1e-9


class DomainError(ValueError):
    """Raised for malformed decision sets or vectors of the wrong dimension."""


@dataclass(frozen=True)
class Domain:
    kind: str
    dimension: int
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SUPPORTED_DOMAINS:
            raise DomainError(f"Неизвестный тип области: {self.kind!r}")
        if self.dimension < 1:
            raise DomainError(f"Размерность области должна быть положительной, получено {self.dimension}")
        if self.kind == DOMAIN_BOX:
            if len(self.lower) != self.dimension or len(self.upper) != self.dimension:
                raise DomainError("Границы box должны иметь размерность области")
            if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
                raise DomainError("Нижняя граница box превышает верхнюю")
        if self.kind == DOMAIN_BALL:
            if len(self.center) != self.dimension:
                raise DomainError("Центр шара должен иметь размерность области")
            if not self.radius > 0:
                raise DomainError(f"Радиус шара должен быть положительным, получено {self.radius}")

    @property
    def is_bounded(self) -> bool:
        return self.kind != DOMAIN_FREE

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


def full_space(dimension: int) -> Domain:
    return Domain(kind=DOMAIN_FREE, dimension=dimension)


def probability_simplex(dimension: int) -> Domain:
    return Domain(kind=DOMAIN_SIMPLEX, dimension=dimension)


def box(lower: Sequence[float], upper: Sequence[float]) -> Domain:
    lower_t = tuple(float(v) for v in lower)
    return Domain(kind=DOMAIN_BOX, dimension=len(lower_t), lower=lower_t, upper=tuple(float(v) for v in upper))


def euclidean_ball(center: Sequence[float], radius: float) -> Domain:
    center_t = tuple(float(v) for v in center)
    return Domain(kind=DOMAIN_BALL, dimension=len(center_t), center=center_t, radius=float(radius))


def _as_vector(domain: Domain, x: Sequence[float] | np.ndarray) -> np.ndarray:
    vector = np.asarray(x, dtype=float)
    if vector.shape != (domain.dimension,):
        raise DomainError(
            f"Размерность вектора {vector.shape} не совпадает с размерностью области {domain.dimension}"
        )
    return vector


def contains(domain: Domain, x: Sequence[float] | np.ndarray, tol: float = MEMBERSHIP_TOLERANCE) -> bool:
    """Return whether ``x`` satisfies the membership constraints within ``tol``."""
    vector = _as_vector(domain, x)
    if not np.all(np.isfinite(vector)):
        return False
    if domain.kind == DOMAIN_FREE:
        return True
    if domain.kind == DOMAIN_SIMPLEX:
        return bool(np.all(vector >= -tol) and abs(float(vector.sum()) - 1.0) <= tol)
    if domain.kind == DOMAIN_BOX:
        return bool(np.all(vector >= domain.lower_array - tol) and np.all(vector <= domain.upper_array + tol))
    return bool(np.linalg.norm(vector - domain.center_array) <= domain.radius + tol)


def project_onto_simplex(z: np.ndarray) -> np.ndarray:
    """Sort-based threshold projection onto the probability simplex, O(n log n)."""
    descending = np.sort(z)[::-1]
    cumulative = np.cumsum(descending) - 1.0
    ranks = np.arange(1, z.size + 1)
    support = descending - cumulative / ranks > 0
    rho = int(np.nonzero(support)[0][-1])
    theta = cumulative[rho] / (rho + 1)
    return np.maximum(z - theta, 0.0)


def euclidean_project(domain: Domain, z: Sequence[float] | np.ndarray) -> np.ndarray:
    """Return the Euclidean-nearest point of ``domain``; ``z`` itself when already feasible."""
    vector = _as_vector(domain, z)
    if not np.all(np.isfinite(vector)):
        raise DomainError("Проекция не определена для вектора с нечисловыми компонентами")
    if domain.kind == DOMAIN_FREE:
        return vector.copy()
    if domain.kind == DOMAIN_SIMPLEX:
        if contains(domain, vector):
            return vector.copy()
        return project_onto_simplex(vector)
    if domain.kind == DOMAIN_BOX:
        return np.clip(vector, domain.lower_array, domain.upper_array)

    offset = vector - domain.center_array
    distance = float(np.linalg.norm(offset))
    if distance <= domain.radius:
        return vector.copy()
    return domain.center_array + offset * (domain.radius / distance)


def default_initial_point(domain: Domain) -> np.ndarray:
    """Barycenter of the simplex, ball center, zero (clipped into the box) otherwise."""
    if domain.kind == DOMAIN_SIMPLEX:
        return np.full(domain.dimension, 1.0 / domain.dimension)
    if domain.kind == DOMAIN_BALL:
        return domain.center_array.copy()
    if domain.kind == DOMAIN_BOX:
        return np.clip(np.zeros(domain.dimension), domain.lower_array, domain.upper_array)
    return np.zeros(domain.dimension)


def sample_points(
    domain: Domain,
    count: int,
    rng: np.random.Generator,
    spread: float = 3.0,
    strictly_positive: bool = False,
) -> np.ndarray:
    """Draw ``count`` feasible points; free space is sampled from N(0, spread^2)."""
    n = domain.dimension
    if domain.kind == DOMAIN_SIMPLEX:
        points = rng.dirichlet(np.ones(n), size=count)
        if strictly_positive:
            points = np.maximum(points, 1e-6)
            points = points / points.sum(axis=1, keepdims=True)
        return points
    if domain.kind == DOMAIN_BOX:
        return rng.uniform(domain.lower_array, domain.upper_array, size=(count, n))
    if domain.kind == DOMAIN_BALL:
        directions = rng.standard_normal((count, n))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = domain.radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / n)
        return domain.center_array + directions * radii
    points = rng.normal(0.0, spread, size=(count, n))
    if strictly_positive:
        points = np.abs(points) + 1e-3
    return points


def max_abs_inner(domain: Domain, a: np.ndarray) -> Optional[float]:
    """Return max over the domain of |<a, x>|, or None when unbounded."""
    a = _as_vector(domain, a)
    if not domain.is_bounded:
        return None if np.any(a != 0) else 0.0
    if domain.kind == DOMAIN_SIMPLEX:
        # Linear functions attain their extremes at the vertices.
        return float(np.max(np.abs(a)))
    if domain.kind == DOMAIN_BOX:
        return float(max(
            abs(float(np.sum(np.where(a > 0, a * domain.upper_array, a * domain.lower_array)))),
            abs(float(np.sum(np.where(a > 0, a * domain.lower_array, a * domain.upper_array)))),
        ))
    return abs(float(a @ domain.center_array)) + domain.radius * float(np.linalg.norm(a))


def max_distance(domain: Domain, point: np.ndarray) -> Optional[float]:
    """Return max over the domain of ||x - point||, or None when unbounded."""
    point = _as_vector(domain, point)
    if not domain.is_bounded:
        return None
    if domain.kind == DOMAIN_SIMPLEX:
        vertices = np.eye(domain.dimension)
        return float(np.max(np.linalg.norm(vertices - point, axis=1)))
    if domain.kind == DOMAIN_BOX:
        far_corner = np.where(
            np.abs(domain.lower_array - point) > np.abs(domain.upper_array - point),
            domain.lower_array,
            domain.upper_array,
        )
        return float(np.linalg.norm(far_corner - point))
    return float(np.linalg.norm(point - domain.center_array)) + domain.radius
