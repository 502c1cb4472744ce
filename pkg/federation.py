"""Clipped federated stochastic mirror descent engine.

Iteration t turns the client states x_{i,t} into y_{i,t+1}; when t + 1 is a
communication instant the server averages the y's and broadcasts the result,
otherwise x_{i,t+1} = y_{i,t+1}. Every recorded iteration is audited against
the consensus bound ||x_{i,t} - x_bar_t|| <= 2 sum_{s=tau(t)}^{t-1} alpha_s lambda_s.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from clipping import ClipReport, clip
from domains import Domain, contains, default_initial_point, sample_points
from geometry import MirrorGeometry, check_pairing, mirror_step
from logger import logger
from noise import NoiseModel, StochasticOracle, diagnostic_stream, noisy_gradient
from problems import Problem, average_error, objective, solve_optimum
from schedules import CommClock, ScheduleParams, ScheduleTable, build_table, consensus_bound, validate
from settings import progress_every, resolve_max_workers


ASSERT_STRICT = "strict"
ASSERT_RECORD = "record"
ASSERT_OFF = "off"
SUPPORTED_ASSERTION_MODES = {ASSERT_STRICT, ASSERT_RECORD, ASSERT_OFF}

RECORD_SYNC = "sync"
RECORD_FULL = "full"
SUPPORTED_RECORDING = {RECORD_SYNC, RECORD_FULL}

INIT_DEFAULT = "default"
INIT_RANDOM = "random"
SUPPORTED_INITIALIZERS = {INIT_DEFAULT, INIT_RANDOM}

CONSENSUS_TOLERANCE = 1e-9
MEMBERSHIP_AUDIT_TOLERANCE = 1e-9
INITIAL_POINTS_PURPOSE = 1


class FederationConfigError(ValueError):
    """Raised when a federation configuration cannot be executed."""


class ConsensusViolation(RuntimeError):
    """Raised in strict mode when a client state leaves the consensus bound."""

    def __init__(self, client: int, iteration: int, deviation: float, bound: float) -> None:
        super().__init__(
            f"Нарушена оценка консенсуса: клиент {client}, итерация {iteration}, "
            f"отклонение {deviation:.17g} > граница {bound:.17g}"
        )
        self.client = client
        self.iteration = iteration
        self.deviation = deviation
        self.bound = bound


@dataclass(frozen=True, eq=False)
class FederationConfig:
    clock: CommClock
    schedule: ScheduleParams
    geometry: MirrorGeometry
    domain: Domain
    problem: Problem
    noise: NoiseModel
    master_seed: int = 0
    initial_points: Optional[np.ndarray] = None
    initializer: str = INIT_DEFAULT
    assertion_mode: str = ASSERT_STRICT
    record_states: str = RECORD_SYNC
    checkpoint_stride: int = 0
    max_workers: Optional[int] = None
    optimal_value: Optional[float] = None

    @property
    def agents(self) -> int:
        return self.problem.agents


@dataclass(eq=False)
class FederationRun:
    horizon: int
    agents: int
    f_star: float
    t: np.ndarray
    f_gap: np.ndarray
    consensus_max: np.ndarray
    consensus_bound: np.ndarray
    clip_fraction: np.ndarray
    alpha: np.ndarray
    lambda_: np.ndarray
    ergodic_averages: np.ndarray
    final_states: np.ndarray
    sync_iterations: list[int] = field(default_factory=list)
    sync_states: list[np.ndarray] = field(default_factory=list)
    checkpoints: list[tuple[int, float]] = field(default_factory=list)
    trajectories: Optional[np.ndarray] = None
    consensus_violations: int = 0
    displacement_violations: int = 0
    worst_consensus_slack: float = float("-inf")

    @property
    def sync_rounds(self) -> int:
        return len(self.sync_iterations)


def validate_config(config: FederationConfig) -> np.ndarray:
    """Check the configuration and return the (m, n) initial client states."""
    if config.agents < 1:
        raise FederationConfigError("Нужен хотя бы один клиент")
    if config.problem.dimension != config.domain.dimension:
        raise FederationConfigError(
            f"Размерность задачи {config.problem.dimension} не совпадает с областью {config.domain.dimension}"
        )
    check_pairing(config.geometry, config.domain)
    validate(config.schedule)
    if config.assertion_mode not in SUPPORTED_ASSERTION_MODES:
        raise FederationConfigError(f"Неизвестный режим проверок: {config.assertion_mode!r}")
    if config.record_states not in SUPPORTED_RECORDING:
        raise FederationConfigError(f"Неизвестный режим записи состояний: {config.record_states!r}")
    if config.checkpoint_stride < 0:
        raise FederationConfigError("checkpoint_stride не может быть отрицательным")
    if config.master_seed < 0:
        raise FederationConfigError("master_seed не может быть отрицательным")

    m, n = config.agents, config.domain.dimension
    if config.initial_points is not None:
        points = np.array(config.initial_points, dtype=float).reshape(m, n)
    elif config.initializer == INIT_RANDOM:
        stream = diagnostic_stream(config.master_seed, purpose=INITIAL_POINTS_PURPOSE)
        points = np.tile(sample_points(config.domain, 1, stream, strictly_positive=True)[0], (m, 1))
    elif config.initializer == INIT_DEFAULT:
        points = np.tile(default_initial_point(config.domain), (m, 1))
    else:
        raise FederationConfigError(f"Неизвестный инициализатор: {config.initializer!r}")

    for client, point in enumerate(points):
        if not contains(config.domain, point):
            raise FederationConfigError(f"Начальная точка клиента {client} не принадлежит области")
    # The consensus bound at t = 1 is zero, so audited runs must start in consensus.
    if config.assertion_mode != ASSERT_OFF and not np.all(points == points[0]):
        raise FederationConfigError("Начальные точки клиентов должны совпадать, когда включена проверка консенсуса")
    return points


def sync_round(states: np.ndarray) -> np.ndarray:
    """Average of the uploaded states, summed in client index order."""
    total = np.array(states[0], dtype=float)
    for row in states[1:]:
        total = total + row
    return total / len(states)


def time_average(trajectory: np.ndarray) -> np.ndarray:
    """Arithmetic mean of a (T, n) trajectory over its first axis."""
    points = np.atleast_2d(np.asarray(trajectory, dtype=float))
    return sync_round(points)


def ergodic_average(run: FederationRun, client: int) -> np.ndarray:
    """x_hat_l^T = (1/T) sum_{t=1}^{T} x_{l,t}."""
    if not 0 <= client < run.agents:
        raise FederationConfigError(f"Клиент {client} вне диапазона [0, {run.agents})")
    if run.trajectories is not None:
        return time_average(run.trajectories[:, client, :])
    return run.ergodic_averages[client].copy()


class FederatedSimulator:
    def __init__(self, config: FederationConfig) -> None:
        self.config = config
        self.initial_states = validate_config(config)
        self.oracle = StochasticOracle(problem=config.problem, noise=config.noise, master_seed=config.master_seed)
        self.table: ScheduleTable = build_table(config.schedule, config.clock.horizon)
        self.worker_count = resolve_max_workers(config.max_workers)

    def local_step(self, client: int, t: int, state: np.ndarray) -> tuple[np.ndarray, ClipReport]:
        """One clipped mirror step y_{i,t+1} from x_{i,t}."""
        estimate = noisy_gradient(self.oracle, client, state, t)
        report = clip(estimate, self.table.lambda_[t - 1])
        step = mirror_step(self.config.geometry, self.config.domain, state, report.clipped_vector, self.table.alpha[t - 1])
        return step, report

    def _local_round(
        self,
        t: int,
        states: np.ndarray,
        executor: Optional[concurrent.futures.ThreadPoolExecutor],
    ) -> list[tuple[np.ndarray, ClipReport]]:
        clients = range(self.config.agents)
        if executor is None:
            return [self.local_step(client, t, states[client]) for client in clients]
        # map() yields in submission order.
        return list(executor.map(lambda client: self.local_step(client, t, states[client]), clients))

    def run(self) -> FederationRun:
        if self.worker_count > 1 and self.config.agents > 1:
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=min(self.worker_count, self.config.agents),
                thread_name_prefix="fedsmd-client",
            ) as executor:
                return self._run(executor)
        return self._run(None)

    def _run(self, executor: Optional[concurrent.futures.ThreadPoolExecutor]) -> FederationRun:
        config = self.config
        clock = config.clock
        horizon = clock.horizon
        m, n = config.agents, config.domain.dimension
        f_star = config.optimal_value
        if f_star is None:
            f_star = solve_optimum(config.problem, config.domain).value
        check_consensus = config.assertion_mode != ASSERT_OFF
        report_every = progress_every()

        logger.info(
            "Запуск симуляции: m=%s, P=%s, раундов=%s, T=%s, seed=%s, отображение=%s, область=%s, потоков=%s",
            m, clock.period, clock.rounds, horizon, config.master_seed,
            config.geometry.kind, config.domain.kind, self.worker_count if executor else 1,
        )

        f_gap = np.empty(horizon)
        consensus_max = np.empty(horizon)
        bounds = np.empty(horizon)
        clip_fraction = np.empty(horizon)
        trajectories = np.empty((horizon, m, n)) if config.record_states == RECORD_FULL else None
        run = FederationRun(
            horizon=horizon,
            agents=m,
            f_star=float(f_star),
            t=np.arange(1, horizon + 1),
            f_gap=f_gap,
            consensus_max=consensus_max,
            consensus_bound=bounds,
            clip_fraction=clip_fraction,
            alpha=self.table.alpha,
            lambda_=self.table.lambda_,
            ergodic_averages=np.empty((m, n)),
            final_states=np.empty((m, n)),
            trajectories=trajectories,
        )

        states = self.initial_states.copy()
        ergodic_sum = np.zeros((m, n))
        synced_point: Optional[np.ndarray] = None

        for t in range(1, horizon + 1):
            average = synced_point if synced_point is not None else sync_round(states)
            deviations = np.linalg.norm(states - average, axis=1)
            bound = consensus_bound(config.schedule, clock, t, self.table)
            consensus_max[t - 1] = float(deviations.max())
            bounds[t - 1] = bound
            if check_consensus:
                self._audit_consensus(run, t, states, deviations, bound, synced_point is not None)

            f_gap[t - 1] = objective(config.problem, average) - f_star
            ergodic_sum += states
            if trajectories is not None:
                trajectories[t - 1] = states
            if config.checkpoint_stride and (t % config.checkpoint_stride == 0 or t == horizon):
                run.checkpoints.append((t, average_error(config.problem, ergodic_sum / t, f_star)))

            results = self._local_round(t, states, executor)
            proposals = np.array([step for step, _ in results])
            clip_fraction[t - 1] = sum(report.was_clipped for _, report in results) / m
            if config.assertion_mode == ASSERT_RECORD:
                self._audit_displacement(run, t, states, proposals)

            if t == horizon:
                break
            if clock.is_communication_instant(t + 1):
                synced_point = sync_round(proposals)
                states = np.tile(synced_point, (m, 1))
                run.sync_iterations.append(t + 1)
                run.sync_states.append(synced_point.copy())
                if len(run.sync_iterations) % report_every == 0:
                    logger.debug("Раунд %s/%s завершен (t=%s)", len(run.sync_iterations), clock.rounds, t + 1)
            else:
                synced_point = None
                states = proposals

        run.ergodic_averages = ergodic_sum / horizon
        run.final_states = states.copy()
        logger.info(
            "Симуляция завершена: T=%s, синхронизаций=%s, f(x_bar_T)-f*=%.6g, нарушений консенсуса=%s",
            horizon, run.sync_rounds, f_gap[-1], run.consensus_violations,
        )
        return run

    def _audit_consensus(
        self,
        run: FederationRun,
        t: int,
        states: np.ndarray,
        deviations: np.ndarray,
        bound: float,
        synced: bool,
    ) -> None:
        worst = int(np.argmax(deviations))
        slack = float(deviations[worst]) - bound
        run.worst_consensus_slack = max(run.worst_consensus_slack, slack)
        violated = slack > CONSENSUS_TOLERANCE
        if synced and not np.all(states == states[0]):
            violated = True
        if not violated:
            return
        run.consensus_violations += 1
        if self.config.assertion_mode == ASSERT_STRICT:
            raise ConsensusViolation(worst, t, float(deviations[worst]), bound)
        logger.error(
            "Оценка консенсуса нарушена: клиент %s, t=%s, отклонение=%.17g, граница=%.17g",
            worst, t, deviations[worst], bound,
        )

    def _audit_displacement(self, run: FederationRun, t: int, states: np.ndarray, proposals: np.ndarray) -> None:
        limit = self.table.step_products[t - 1] + CONSENSUS_TOLERANCE
        moves = np.linalg.norm(proposals - states, axis=1)
        outside = int(np.sum(moves > limit))
        if outside:
            run.displacement_violations += outside
            logger.error("Смещение клиента превысило alpha_t*lambda_t на итерации %s (%s клиентов)", t, outside)


def run(config: FederationConfig) -> FederationRun:
    return FederatedSimulator(config).run()
