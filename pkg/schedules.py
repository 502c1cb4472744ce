"""Stepsize and clipping schedules, communication clock and series constants.

alpha_t = (1 + ln t)^(-gamma) * t^(-(kappa - mu)) * min{t^(-mu), 1 / c*}
lambda_t = max{t^mu, c*}

c* is 2G under the bounded-gradient rule and 2mL(2 R1 + 10 A) + 2B under the
smoothness rule, where A itself depends on the schedule (see
``resolve_smoothness_scale``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from logger import logger


VARIANT_BOUNDED_GRADIENT = "bounded_gradient"
VARIANT_SMOOTH = "smooth"
SUPPORTED_VARIANTS = {VARIANT_BOUNDED_GRADIENT, VARIANT_SMOOTH}

INEQUALITY_TOLERANCE = 1e-12
FIXED_POINT_TOLERANCE = 1e-6
FIXED_POINT_MAX_ITERATIONS = 50
DEFAULT_CONFIDENCE_DELTA = 0.05


class ScheduleError(ValueError):
    """Raised when schedule parameters violate the admissibility inequalities."""

    def __init__(self, message: str, field: str = "") -> None:
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class ScheduleParams:
    p: float
    mu: float
    kappa: float
    gamma: float
    scale_constant: float
    variant: str = VARIANT_BOUNDED_GRADIENT


@dataclass(frozen=True)
class CommClock:
    period: int
    rounds: int

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ScheduleError(f"Период коммуникации должен быть >= 1, получено {self.period}", "period")
        if self.rounds < 1:
            raise ScheduleError(f"Число раундов должно быть >= 1, получено {self.rounds}", "rounds")

    @property
    def horizon(self) -> int:
        return 1 + self.period * self.rounds

    @property
    def communication_instants(self) -> np.ndarray:
        return np.arange(1 + self.period, self.horizon + 1, self.period)

    def is_communication_instant(self, t: int) -> bool:
        return 1 < t <= self.horizon and (t - 1) % self.period == 0


def validate(params: ScheduleParams) -> None:
    """Raise ScheduleError naming the first violated condition."""
    if not 1.0 < params.p <= 2.0:
        raise ScheduleError(f"Нарушено условие 1 < p <= 2: p = {params.p}", "tail_p")
    if not 0.0 < params.mu < 1.0:
        raise ScheduleError(f"Нарушено условие 0 < mu < 1: mu = {params.mu}", "mu")
    if not 0.0 < params.kappa < 1.0:
        raise ScheduleError(f"Нарушено условие 0 < kappa < 1: kappa = {params.kappa}", "kappa")
    if not params.gamma > 1.0:
        raise ScheduleError(f"Нарушено условие gamma > 1: gamma = {params.gamma}", "gamma")
    if not (params.scale_constant > 0 and math.isfinite(params.scale_constant)):
        raise ScheduleError(f"Нарушено условие c* > 0: c* = {params.scale_constant}", "scale_constant")
    if params.variant not in SUPPORTED_VARIANTS:
        raise ScheduleError(f"Неизвестный вариант расписания: {params.variant!r}", "schedule_variant")
    if params.kappa < params.mu + 0.5 - INEQUALITY_TOLERANCE:
        raise ScheduleError(
            f"Нарушено условие kappa >= mu + 1/2: {params.kappa} < {params.mu + 0.5}", "kappa"
        )
    lower = 1.0 - params.mu * (params.p - 1.0)
    if params.kappa < lower - INEQUALITY_TOLERANCE:
        raise ScheduleError(f"Нарушено условие kappa >= 1 - mu(p - 1): {params.kappa} < {lower}", "kappa")


def minimax_pair(p: float) -> tuple[float, float]:
    """(kappa, mu) = ((p + 1) / (2p), 1 / (2p)); both branches of the kappa bound are tight."""
    if not 1.0 < p <= 2.0:
        raise ScheduleError(f"Нарушено условие 1 < p <= 2: p = {p}", "tail_p")
    return (p + 1.0) / (2.0 * p), 1.0 / (2.0 * p)


def minimax_params(
    p: float,
    gamma: float,
    scale_constant: float,
    variant: str = VARIANT_BOUNDED_GRADIENT,
) -> ScheduleParams:
    kappa, mu = minimax_pair(p)
    params = ScheduleParams(p=p, mu=mu, kappa=kappa, gamma=gamma, scale_constant=scale_constant, variant=variant)
    validate(params)
    return params


def _alpha_values(params: ScheduleParams, t: np.ndarray) -> np.ndarray:
    t = t.astype(float)
    decay = np.power(1.0 + np.log(t), -params.gamma) * np.power(t, -(params.kappa - params.mu))
    return decay * np.minimum(np.power(t, -params.mu), 1.0 / params.scale_constant)


def _lambda_values(params: ScheduleParams, t: np.ndarray) -> np.ndarray:
    return np.maximum(np.power(t.astype(float), params.mu), params.scale_constant)


def _check_t(t: int) -> int:
    if t < 1:
        raise ScheduleError(f"Номер итерации должен быть >= 1, получено {t}", "t")
    return int(t)


def alpha(params: ScheduleParams, t: int) -> float:
    return float(_alpha_values(params, np.array([_check_t(t)]))[0])


def lambda_(params: ScheduleParams, t: int) -> float:
    return float(_lambda_values(params, np.array([_check_t(t)]))[0])


def alpha_array(params: ScheduleParams, horizon: int) -> np.ndarray:
    """alpha_t for t = 1..horizon (index 0 holds t = 1)."""
    return _alpha_values(params, np.arange(1, horizon + 1))


def lambda_array(params: ScheduleParams, horizon: int) -> np.ndarray:
    return _lambda_values(params, np.arange(1, horizon + 1))


@dataclass(frozen=True, eq=False)
class ScheduleTable:
    """Immutable per-run arrays; index t - 1 holds iteration t."""

    alpha: np.ndarray
    lambda_: np.ndarray
    step_products: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.alpha.size)


def build_table(params: ScheduleParams, horizon: int) -> ScheduleTable:
    alphas = alpha_array(params, horizon)
    lambdas = lambda_array(params, horizon)
    products = alphas * lambdas
    for array in (alphas, lambdas, products):
        array.flags.writeable = False
    return ScheduleTable(alpha=alphas, lambda_=lambdas, step_products=products)


def tau(clock: CommClock, t: int) -> int:
    """Latest communication instant at or before t; 1 before the first sync."""
    if not 1 <= t <= clock.horizon:
        raise ScheduleError(f"t = {t} вне диапазона [1, {clock.horizon}]", "t")
    return _tau_value(clock.period, t)


def _tau_value(period: int, t: int) -> int:
    if t <= 1 + period:
        return 1
    return 1 + ((t - 1) // period) * period


def _tau_indices(period: int, horizon: int) -> np.ndarray:
    t = np.arange(1, horizon + 1)
    taus = 1 + ((t - 1) // period) * period
    taus[t <= 1 + period] = 1
    return taus


def consensus_bound(
    params: ScheduleParams,
    clock: CommClock,
    t: int,
    table: Optional[ScheduleTable] = None,
) -> float:
    """2 * sum_{s = tau(t)}^{t - 1} alpha_s lambda_s; exactly zero at t = 1 and at sync instants."""
    start = tau(clock, t)
    if t == 1 or clock.is_communication_instant(t):
        return 0.0
    if table is None or table.horizon < t:
        table = build_table(params, t)
    return 2.0 * float(np.sum(table.step_products[start - 1:t - 1]))


@dataclass(frozen=True)
class SeriesDiagnostics:
    horizon: int
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    def as_dict(self) -> dict[str, float]:
        return {"C0": self.c0, "C1": self.c1, "C2": self.c2, "C3": self.c3, "C4": self.c4, "C5": self.c5}


def series_from_arrays(alphas: np.ndarray, lambdas: np.ndarray, period: int, p: float) -> SeriesDiagnostics:
    """Partial sums of C0..C5 over the given schedule arrays."""
    horizon = int(alphas.size)
    taus = _tau_indices(period, horizon) - 1
    alpha_tau = alphas[taus]
    lambda_tau = lambdas[taus]
    products = alphas * lambdas
    with np.errstate(divide="ignore", invalid="ignore"):
        inverse_p = np.where(lambdas > 0, np.power(lambdas, -p), 0.0)
        c2_terms = np.where(lambdas > 0, alphas * np.power(lambdas, 1.0 - p), 0.0)
        c3_terms = np.where(lambdas > 0, alphas ** 2 * np.power(lambdas, 2.0 - 2.0 * p), 0.0)
    return SeriesDiagnostics(
        horizon=horizon,
        c0=float(np.sum(alphas * alpha_tau ** 2 * lambda_tau ** 2)),
        c1=float(np.sum(alphas * alpha_tau * lambdas * lambda_tau)),
        c2=float(np.sum(c2_terms)),
        c3=float(np.sum(c3_terms)),
        c4=float(np.sum(products ** 2 * inverse_p)),
        c5=float(np.sum(products ** 4 * inverse_p)),
    )


def series_diagnostics(params: ScheduleParams, clock: CommClock, horizon: int) -> SeriesDiagnostics:
    """Partial sums up to ``horizon`` (which may exceed the clock's own horizon)."""
    validate(params)
    return series_from_arrays(alpha_array(params, horizon), lambda_array(params, horizon), clock.period, params.p)


def c2_term_majorant(params: ScheduleParams, horizon: int) -> np.ndarray:
    """(1 + ln t)^(-gamma) t^(-(kappa + (p - 1) mu)), a termwise upper bound of C2."""
    t = np.arange(1, horizon + 1, dtype=float)
    return np.power(1.0 + np.log(t), -params.gamma) * np.power(t, -(params.kappa + (params.p - 1.0) * params.mu))


def error_constant_a(
    series: SeriesDiagnostics,
    agents: int,
    smoothness: float,
    period: int,
    sigma: float,
    p: float,
    delta: float = DEFAULT_CONFIDENCE_DELTA,
    include_c0: bool = True,
) -> float:
    """A = log(1/delta) + mLP^2 C0 + 2mP C1 + 4 s^p C2 + 16m s^2p C3 + 40m s^p (1+3m) C4 + 40m^2 s^p C5 + 8m.

    The bounded-gradient rule drops the C0 term.
    """
    if not 0.0 < delta < 1.0:
        raise ScheduleError(f"Нарушено условие 0 < delta < 1: delta = {delta}", "confidence_delta")
    m = float(agents)
    sigma_p = sigma ** p
    c0_term = m * smoothness * period ** 2 * series.c0 if include_c0 else 0.0
    return (
        math.log(1.0 / delta)
        + c0_term
        + 2.0 * m * period * series.c1
        + 4.0 * sigma_p * series.c2
        + 16.0 * m * sigma_p ** 2 * series.c3
        + 40.0 * m * sigma_p * (1.0 + 3.0 * m) * series.c4
        + 40.0 * m * m * sigma_p * series.c5
        + 8.0 * m
    )


@dataclass(frozen=True)
class SmoothnessConstants:
    constant_a: float
    scale_constant: float
    iterations: int
    converged: bool


def smoothness_scale(agents: int, smoothness: float, initial_radius: float, initial_gradient: float, constant_a: float) -> float:
    """c* = 2mL(2 R1 + 10 A) + 2B."""
    return 2.0 * agents * smoothness * (2.0 * initial_radius + 10.0 * constant_a) + 2.0 * initial_gradient


def resolve_smoothness_scale(
    p: float,
    mu: float,
    kappa: float,
    gamma: float,
    clock: CommClock,
    agents: int,
    smoothness: float,
    initial_radius: float,
    initial_gradient: float,
    sigma: float,
    delta: float = DEFAULT_CONFIDENCE_DELTA,
) -> SmoothnessConstants:
    """Resolve the circular A <-> c* dependency by an upward fixed-point iteration.

    A_0 = 8m and A_{k+1} = max(A_k, A(c*(A_k))) with sums truncated at the
    clock horizon; any A at least as large as required keeps the guarantee.
    """
    constant_a = 8.0 * agents
    for iteration in range(1, FIXED_POINT_MAX_ITERATIONS + 1):
        scale = smoothness_scale(agents, smoothness, initial_radius, initial_gradient, constant_a)
        params = ScheduleParams(p=p, mu=mu, kappa=kappa, gamma=gamma, scale_constant=scale, variant=VARIANT_SMOOTH)
        series = series_diagnostics(params, clock, clock.horizon)
        candidate = error_constant_a(series, agents, smoothness, clock.period, sigma, p, delta)
        updated = max(constant_a, candidate)
        if abs(updated - constant_a) <= FIXED_POINT_TOLERANCE * constant_a:
            scale = smoothness_scale(agents, smoothness, initial_radius, initial_gradient, updated)
            return SmoothnessConstants(constant_a=updated, scale_constant=scale, iterations=iteration, converged=True)
        constant_a = updated

    logger.warning(
        "Итерация для константы A не сошлась за %s шагов, используем A=%.6g",
        FIXED_POINT_MAX_ITERATIONS,
        constant_a,
    )
    scale = smoothness_scale(agents, smoothness, initial_radius, initial_gradient, constant_a)
    return SmoothnessConstants(
        constant_a=constant_a,
        scale_constant=scale,
        iterations=FIXED_POINT_MAX_ITERATIONS,
        converged=False,
    )


def ergodic_error_bound(horizon: int, alpha_final: float, agents: int, initial_radius: float, constant_a: float) -> float:
    """m^2 (R1 + 10 A)^2 / (T alpha_T), the high-probability bound on f(x_hat) - f*."""
    return agents ** 2 * (initial_radius + 10.0 * constant_a) ** 2 / (horizon * alpha_final)


def rate_exponent(p: float) -> float:
    """(1 - p) / (2p), the polynomial part of the ergodic rate."""
    return (1.0 - p) / (2.0 * p)


def rate_shape(horizon: float, p: float, gamma: float) -> float:
    """T^((1-p)/(2p)) * log^gamma T."""
    return horizon ** rate_exponent(p) * math.log(horizon) ** gamma
