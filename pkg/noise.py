"""Heavy-tailed gradient oracles with counter-based random streams.

Every (agent, iteration) pair owns a disjoint Philox block derived from the
master seed, so client updates can run in any order or in parallel and still
draw bit-identical samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from clipping import clip_rows
from logger import logger
from problems import Problem, gradient


NOISE_PARETO = "pareto"
NOISE_GAUSSIAN = "gaussian"
NOISE_NONE = "none"
SUPPORTED_NOISE = {NOISE_PARETO, NOISE_GAUSSIAN, NOISE_NONE}

MASK_64 = (1 << 64) - 1
# Agent ids at or above this value are reserved for diagnostic streams.
DIAGNOSTIC_CHANNEL = 1 << 63
CERTIFY_SEED = 20240917
CERTIFY_SAMPLES = 10_000_000
MIN_DIAGNOSTIC_SAMPLES = 1_000
SAMPLE_CHUNK = 1_000_000


class NoiseModelError(ValueError):
    """Raised for invalid noise parameters or unmet diagnostic preconditions."""


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    p_moment: float = 2.0
    beta: float = 2.0
    x_scale: float = 0.5
    std: float = 1.0
    sigma: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in SUPPORTED_NOISE:
            raise NoiseModelError(f"Неизвестная модель шума: {self.kind!r}")
        _check_p(self.p_moment)
        if self.kind == NOISE_PARETO:
            if not self.beta > 1:
                raise NoiseModelError(
                    f"Параметр Парето beta={self.beta} должен быть > 1, иначе среднее не существует"
                )
            if not self.x_scale > 0:
                raise NoiseModelError(f"Масштаб Парето должен быть положительным, получено {self.x_scale}")
        if self.kind == NOISE_GAUSSIAN and not self.std > 0:
            raise NoiseModelError(f"Стандартное отклонение должно быть положительным, получено {self.std}")
        if self.sigma is not None and self.sigma < 0:
            raise NoiseModelError(f"sigma не может быть отрицательной, получено {self.sigma}")

    @property
    def pareto_mean(self) -> float:
        return self.beta * self.x_scale / (self.beta - 1.0)


def shifted_pareto(
    beta: float = 2.0,
    x_scale: float = 0.5,
    p_moment: float = 1.8,
    sigma: Optional[float] = None,
) -> NoiseModel:
    return NoiseModel(kind=NOISE_PARETO, p_moment=p_moment, beta=beta, x_scale=x_scale, sigma=sigma)


def gaussian(std: float = 1.0, p_moment: float = 2.0, sigma: Optional[float] = None) -> NoiseModel:
    return NoiseModel(kind=NOISE_GAUSSIAN, p_moment=p_moment, std=std, sigma=sigma)


def no_noise() -> NoiseModel:
    return NoiseModel(kind=NOISE_NONE, sigma=0.0)


def _check_p(p: float) -> float:
    if not 1.0 < p <= 2.0:
        raise NoiseModelError(f"Хвостовой параметр p={p} должен лежать в (1, 2]")
    return p


def make_stream(master_seed: int, agent: int, iteration: int) -> np.random.Generator:
    """Generator over the Philox block keyed by (seed, agent) at counter ``iteration``."""
    if master_seed < 0 or agent < 0 or iteration < 0:
        raise NoiseModelError("seed, agent и iteration должны быть неотрицательными")
    key = ((agent & MASK_64) << 64) | (master_seed & MASK_64)
    counter = (iteration & MASK_64) << 128
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def diagnostic_stream(master_seed: int, purpose: int = 0) -> np.random.Generator:
    return make_stream(master_seed, DIAGNOSTIC_CHANNEL + purpose, 0)


def pareto_inverse_cdf(model: NoiseModel, u: np.ndarray | float) -> np.ndarray:
    """Raw Pareto(beta, x_scale) sample for uniforms ``u`` in [0, 1)."""
    return model.x_scale * np.power(1.0 - np.asarray(u, dtype=float), -1.0 / model.beta)


def sample_noise(
    model: NoiseModel,
    dim: int,
    stream: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Zero-mean noise with i.i.d. coordinates; shape (dim,) or (size, dim)."""
    shape: tuple[int, ...] = (dim,) if size is None else (size, dim)
    if model.kind == NOISE_NONE:
        return np.zeros(shape)
    if model.kind == NOISE_GAUSSIAN:
        return model.std * stream.standard_normal(shape)
    return pareto_inverse_cdf(model, stream.random(shape)) - model.pareto_mean


@dataclass(frozen=True)
class StochasticOracle:
    problem: Problem
    noise: NoiseModel
    master_seed: int = 0


def noisy_gradient(oracle: StochasticOracle, agent: int, x: Sequence[float] | np.ndarray, iteration: int) -> np.ndarray:
    """grad f_i(x) + xi, drawn from the (agent, iteration) block of the master seed."""
    exact = gradient(oracle.problem, agent, x)
    if oracle.noise.kind == NOISE_NONE:
        return exact
    stream = make_stream(oracle.master_seed, agent, iteration)
    return exact + sample_noise(oracle.noise, exact.size, stream)


def _chunk_sizes(total: int) -> list[int]:
    sizes = [SAMPLE_CHUNK] * (total // SAMPLE_CHUNK)
    if total % SAMPLE_CHUNK:
        sizes.append(total % SAMPLE_CHUNK)
    return sizes


def moment_diagnostic(
    model: NoiseModel,
    p: float,
    n_samples: int,
    stream: np.random.Generator,
    dim: int = 1,
) -> float:
    """Empirical (1/N) sum ||xi_k||^p; diverges with N at p = 2 for Pareto(beta=2)."""
    _check_p(p)
    if n_samples < MIN_DIAGNOSTIC_SAMPLES:
        raise NoiseModelError(f"Нужно не меньше {MIN_DIAGNOSTIC_SAMPLES} выборок, получено {n_samples}")
    if model.kind == NOISE_NONE:
        return 0.0
    total = 0.0
    for chunk in _chunk_sizes(n_samples):
        samples = sample_noise(model, dim, stream, size=chunk)
        total += float(np.sum(np.linalg.norm(samples, axis=1) ** p))
    return total / n_samples


@lru_cache(maxsize=64)
def certify_sigma(model: NoiseModel, p: float, dim: int, n_samples: int = CERTIFY_SAMPLES) -> float:
    """sigma with E||xi||^p <= sigma^p: closed form for Gaussian, seeded Monte-Carlo for Pareto."""
    _check_p(p)
    if model.kind == NOISE_NONE:
        return 0.0
    if model.kind == NOISE_GAUSSIAN:
        # E||N(0, s^2 I_n)||^p = s^p 2^{p/2} Gamma((n+p)/2) / Gamma(n/2)
        moment = model.std ** p * 2.0 ** (p / 2.0) * math.gamma((dim + p) / 2.0) / math.gamma(dim / 2.0)
        return moment ** (1.0 / p)
    moment = moment_diagnostic(model, p, n_samples, diagnostic_stream(CERTIFY_SEED, purpose=dim), dim=dim)
    sigma = moment ** (1.0 / p)
    logger.info("Оценка sigma для шума Парето (beta=%s, p=%s, n=%s): %.6f", model.beta, p, dim, sigma)
    return sigma


def resolve_sigma(model: NoiseModel, dim: int) -> float:
    if model.sigma is not None:
        return model.sigma
    return certify_sigma(model, model.p_moment, dim)


@dataclass(frozen=True)
class ClippedEstimatorReport:
    bias_norm: float
    second_moment: float
    bias_bound: float
    second_moment_bound: float

    @property
    def bounds(self) -> tuple[float, float]:
        return self.bias_bound, self.second_moment_bound

    def holds(self, slack: float = 1.0) -> bool:
        return self.bias_norm <= slack * self.bias_bound and self.second_moment <= slack * self.second_moment_bound


def clipped_estimator_diagnostic(
    oracle: StochasticOracle,
    x: Sequence[float] | np.ndarray,
    level: float,
    p: float,
    sigma: float,
    n_samples: int,
    stream: np.random.Generator,
    agent: int = 0,
) -> ClippedEstimatorReport:
    """Monte-Carlo bias and centred second moment of the clipped estimator at ``x``.

    The reference bounds 4 sigma^p level^(1-p) and 40 sigma^p level^(2-p) are
    only claimed when ||grad f_i(x)|| <= level / 2.
    """
    _check_p(p)
    if n_samples < MIN_DIAGNOSTIC_SAMPLES:
        raise NoiseModelError(f"Нужно не меньше {MIN_DIAGNOSTIC_SAMPLES} выборок, получено {n_samples}")
    exact = gradient(oracle.problem, agent, x)
    exact_norm = float(np.linalg.norm(exact))
    if exact_norm > level / 2.0:
        raise NoiseModelError(
            f"Оценки смещения не применимы: ||grad f|| = {exact_norm:.6g} превышает level/2 = {level / 2.0:.6g}"
        )
    sigma_p = sigma ** p
    bias_bound = 4.0 * sigma_p * level ** (1.0 - p)
    second_moment_bound = 40.0 * sigma_p * level ** (2.0 - p)
    if oracle.noise.kind == NOISE_NONE:
        # A deterministic gradient below the level passes the clip unchanged.
        return ClippedEstimatorReport(0.0, 0.0, bias_bound, second_moment_bound)

    clipped_sum = np.zeros(exact.size)
    squared_norm_sum = 0.0
    for chunk in _chunk_sizes(n_samples):
        samples = exact + sample_noise(oracle.noise, exact.size, stream, size=chunk)
        clipped, _ = clip_rows(samples, level)
        clipped_sum += clipped.sum(axis=0)
        squared_norm_sum += float(np.sum(clipped * clipped))

    clipped_mean = clipped_sum / n_samples
    bias_norm = float(np.linalg.norm(clipped_mean - exact))
    second_moment = max(squared_norm_sum / n_samples - float(clipped_mean @ clipped_mean), 0.0)
    return ClippedEstimatorReport(
        bias_norm=bias_norm,
        second_moment=second_moment,
        bias_bound=bias_bound,
        second_moment_bound=second_moment_bound,
    )
