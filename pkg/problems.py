"""Benchmark objectives: distributed linear regression and separable quadratics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from domains import (
    DOMAIN_FREE,
    DOMAIN_SIMPLEX,
    Domain,
    euclidean_project,
    max_abs_inner,
    max_distance,
)
from logger import logger

if TYPE_CHECKING:
    from federation import FederationRun


PROBLEM_REGRESSION = "regression"
PROBLEM_QUADRATIC = "quadratic"
SUPPORTED_PROBLEMS = {PROBLEM_REGRESSION, PROBLEM_QUADRATIC}

ERROR_FLOOR = 1e-9
OPTIMUM_STEP_TOLERANCE = 1e-13
OPTIMUM_MAX_ITERATIONS = 200_000


class ProblemError(ValueError):
    """Raised for ill-posed optimum computations or malformed instances."""


@dataclass(frozen=True, eq=False)
class Problem:
    """f(x) = sum_i f_i(x); agent i knows only its own (a_i, b_i) or center c_i."""

    kind: str
    features: np.ndarray
    targets: np.ndarray
    centers: np.ndarray
    scale: float = 1.0
    ground_truth: Optional[np.ndarray] = None

    @property
    def agents(self) -> int:
        if self.kind == PROBLEM_REGRESSION:
            return int(self.features.shape[0])
        return int(self.centers.shape[0])

    @property
    def dimension(self) -> int:
        if self.kind == PROBLEM_REGRESSION:
            return int(self.features.shape[1])
        return int(self.centers.shape[1])


@dataclass(frozen=True, eq=False)
class Optimum:
    point: np.ndarray
    value: float


def regression(features: Sequence[Sequence[float]] | np.ndarray, targets: Sequence[float] | np.ndarray) -> Problem:
    a = np.atleast_2d(np.asarray(features, dtype=float))
    b = np.asarray(targets, dtype=float).reshape(-1)
    if a.shape[0] != b.size:
        raise ProblemError(f"Число признаков {a.shape[0]} не совпадает с числом целей {b.size}")
    return Problem(kind=PROBLEM_REGRESSION, features=a, targets=b, centers=np.empty((0, a.shape[1])))


def quadratic(centers: Sequence[Sequence[float]] | np.ndarray, scale: float = 1.0) -> Problem:
    """f_i(x) = scale / 2 * ||x - c_i||^2."""
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    if not scale > 0:
        raise ProblemError(f"Масштаб квадратичной функции должен быть положительным, получено {scale}")
    return Problem(
        kind=PROBLEM_QUADRATIC,
        features=np.empty((0, c.shape[1])),
        targets=np.empty(0),
        centers=c,
        scale=float(scale),
    )


def ground_truth_vector(n: int) -> np.ndarray:
    """[c]_i = 1 for i <= floor(n / 2), 0 otherwise."""
    c = np.zeros(n)
    c[: n // 2] = 1.0
    return c


def generate_regression(m: int, n: int, seed: int) -> Problem:
    """a_i ~ U[-1, 1]^n, b_i = <a_i, c> + eps_i with eps_i ~ N(0, 1)."""
    if m < 1 or n < 1:
        raise ProblemError(f"m и n должны быть положительными, получено m={m}, n={n}")
    rng = np.random.default_rng(seed)
    features = rng.uniform(-1.0, 1.0, size=(m, n))
    c = ground_truth_vector(n)
    targets = features @ c + rng.standard_normal(m)
    problem = regression(features, targets)
    return Problem(
        kind=problem.kind,
        features=problem.features,
        targets=problem.targets,
        centers=problem.centers,
        ground_truth=c,
    )


def _check_agent(problem: Problem, agent: int) -> None:
    if not 0 <= agent < problem.agents:
        raise ProblemError(f"Агент {agent} вне диапазона [0, {problem.agents})")


def gradient(problem: Problem, agent: int, x: Sequence[float] | np.ndarray) -> np.ndarray:
    _check_agent(problem, agent)
    vector = np.asarray(x, dtype=float)
    if problem.kind == PROBLEM_REGRESSION:
        a = problem.features[agent]
        return (float(a @ vector) - problem.targets[agent]) * a
    return problem.scale * (vector - problem.centers[agent])


def objective(problem: Problem, x: Sequence[float] | np.ndarray) -> float:
    vector = np.asarray(x, dtype=float)
    if problem.kind == PROBLEM_REGRESSION:
        residuals = problem.features @ vector - problem.targets
        return 0.5 * float(residuals @ residuals)
    diffs = vector - problem.centers
    return 0.5 * problem.scale * float(np.sum(diffs * diffs))


def smoothness_constant(problem: Problem) -> float:
    """Common Lipschitz constant L of every grad f_i."""
    if problem.kind == PROBLEM_REGRESSION:
        return float(np.max(np.sum(problem.features ** 2, axis=1)))
    return problem.scale


def gradient_bound(problem: Problem, domain: Domain) -> float:
    """G with sup over the domain of ||grad f_i(x)|| <= G for every agent."""
    bound = 0.0
    for agent in range(problem.agents):
        if problem.kind == PROBLEM_REGRESSION:
            a = problem.features[agent]
            reach = max_abs_inner(domain, a)
            if reach is None:
                raise ProblemError("Градиент не ограничен на неограниченной области")
            bound = max(bound, float(np.linalg.norm(a)) * (reach + abs(float(problem.targets[agent]))))
        else:
            distance = max_distance(domain, problem.centers[agent])
            if distance is None:
                raise ProblemError("Градиент не ограничен на неограниченной области")
            bound = max(bound, problem.scale * distance)
    return bound


def _solve_simplex_segment(problem: Problem) -> np.ndarray:
    # x = (s, 1 - s): residual_i(s) = d_i s + e_i, a convex quadratic in s on [0, 1].
    a = problem.features
    d = a[:, 0] - a[:, 1]
    e = a[:, 1] - problem.targets
    curvature = float(d @ d)
    s = 0.5 if curvature == 0.0 else -float(d @ e) / curvature
    s = min(max(s, 0.0), 1.0)
    return np.array([s, 1.0 - s])


def _solve_projected(problem: Problem, domain: Domain) -> np.ndarray:
    """Accelerated projected gradient with adaptive restart on a bounded domain."""
    a = problem.features
    lipschitz = float(np.max(np.linalg.eigvalsh(a.T @ a))) if a.size else 0.0
    if lipschitz == 0.0:
        return euclidean_project(domain, np.zeros(problem.dimension))
    step = 1.0 / lipschitz
    x = euclidean_project(domain, np.zeros(problem.dimension))
    momentum_point = x.copy()
    momentum = 1.0
    for _ in range(OPTIMUM_MAX_ITERATIONS):
        grad = a.T @ (a @ momentum_point - problem.targets)
        x_next = euclidean_project(domain, momentum_point - step * grad)
        if float(np.linalg.norm(x_next - x)) <= OPTIMUM_STEP_TOLERANCE:
            return x_next
        if objective(problem, x_next) > objective(problem, x):
            momentum = 1.0
            momentum_point = x.copy()
            continue
        momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        momentum_point = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x)
        x, momentum = x_next, momentum_next
    logger.warning("Поиск оптимума остановлен по лимиту итераций (%s)", OPTIMUM_MAX_ITERATIONS)
    return x


def solve_optimum(problem: Problem, domain: Domain) -> Optimum:
    """x* minimizing sum_i f_i over the domain and f* = f(x*)."""
    if problem.dimension != domain.dimension:
        raise ProblemError(
            f"Размерность задачи {problem.dimension} не совпадает с размерностью области {domain.dimension}"
        )
    if problem.kind == PROBLEM_QUADRATIC:
        # sum_i scale/2 ||x - c_i||^2 = m scale/2 ||x - mean(c)||^2 + const
        point = euclidean_project(domain, problem.centers.mean(axis=0))
    elif domain.kind == DOMAIN_FREE:
        if np.linalg.matrix_rank(problem.features) < problem.dimension:
            raise ProblemError(
                "Нормальные уравнения вырождены: минимум на всем пространстве не единственен"
            )
        point = np.linalg.lstsq(problem.features, problem.targets, rcond=None)[0]
    elif domain.kind == DOMAIN_SIMPLEX and domain.dimension == 2:
        point = _solve_simplex_segment(problem)
    else:
        point = _solve_projected(problem, domain)
    return Optimum(point=point, value=objective(problem, point))


def clamp_error(value: float) -> float:
    """Report roundoff-level negative errors as zero."""
    if -ERROR_FLOOR < value < 0.0:
        return 0.0
    return value


def average_error(problem: Problem, points: np.ndarray, f_star: float) -> float:
    """(1/m) sum_l f(points[l]) - f*."""
    values = [objective(problem, point) for point in np.atleast_2d(points)]
    return clamp_error(float(np.mean(values)) - f_star)


def global_error(run: FederationRun, problem: Problem, f_star: float) -> float:
    """Global average optimization error at the ergodic averages of all clients."""
    return average_error(problem, run.ergodic_averages, f_star)


def save_instance(problem: Problem, path: Path | str) -> Path:
    """One row per agent: n feature values followed by the target."""
    if problem.kind != PROBLEM_REGRESSION:
        raise ProblemError("Сохранение поддерживается только для задачи регрессии")
    target_path = Path(path)
    target_path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.column_stack([problem.features, problem.targets])
    np.savetxt(target_path, matrix, fmt="%.17g", delimiter=" ")
    return target_path


def load_instance(path: Path | str) -> Problem:
    try:
        matrix = np.loadtxt(Path(path), ndmin=2)
    except (OSError, ValueError) as exc:
        raise ProblemError(f"Не удалось прочитать экземпляр задачи {path}: {exc}") from exc
    if matrix.shape[1] < 2:
        raise ProblemError(f"В файле {path} нужна хотя бы одна колонка признаков и колонка цели")
    return regression(matrix[:, :-1], matrix[:, -1])
