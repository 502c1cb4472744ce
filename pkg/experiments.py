"""Experiment runner: config files, parameter sweeps, CSV/XLSX output and audits."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd

from clipping import clip
from domains import (
    DOMAIN_BALL,
    DOMAIN_BOX,
    DOMAIN_FREE,
    DOMAIN_SIMPLEX,
    SUPPORTED_DOMAINS,
    Domain,
    DomainError,
    box,
    euclidean_ball,
    full_space,
    probability_simplex,
)
from federation import (
    ASSERT_RECORD,
    SUPPORTED_ASSERTION_MODES,
    SUPPORTED_RECORDING,
    FederationConfig,
    FederationConfigError,
    FederationRun,
    run as run_federation,
    validate_config,
)
from geometry import MIRROR_ENTROPIC, MIRROR_EUCLIDEAN, SUPPORTED_MIRRORS, GeometryError, MirrorGeometry, bregman, check_pairing
from logger import logger
from noise import (
    NOISE_GAUSSIAN,
    NOISE_PARETO,
    SUPPORTED_NOISE,
    NoiseModel,
    NoiseModelError,
    StochasticOracle,
    certify_sigma,
    clipped_estimator_diagnostic,
    diagnostic_stream,
    gaussian,
    no_noise,
    resolve_sigma,
    shifted_pareto,
)
from problems import (
    PROBLEM_QUADRATIC,
    PROBLEM_REGRESSION,
    SUPPORTED_PROBLEMS,
    Optimum,
    Problem,
    ProblemError,
    generate_regression,
    global_error,
    gradient,
    gradient_bound,
    quadratic,
    smoothness_constant,
    solve_optimum,
)
from schedules import (
    DEFAULT_CONFIDENCE_DELTA,
    VARIANT_BOUNDED_GRADIENT,
    VARIANT_SMOOTH,
    CommClock,
    ScheduleError,
    ScheduleParams,
    alpha,
    alpha_array,
    c2_term_majorant,
    ergodic_error_bound,
    lambda_array,
    minimax_pair,
    rate_exponent,
    rate_shape,
    resolve_smoothness_scale,
    series_diagnostics,
    validate as validate_schedule,
)
from settings import default_out_dir, parse_bool, resolve_max_workers


SWEEP_NONE = "none"
SWEEP_CLIENTS = "clients"
SWEEP_PERIOD = "period"
SWEEP_TAIL_P = "tail_p"
SUPPORTED_SWEEPS = {SWEEP_NONE, SWEEP_CLIENTS, SWEEP_PERIOD, SWEEP_TAIL_P}
DEFAULT_SWEEP_VALUES: dict[str, tuple[float, ...]] = {
    SWEEP_CLIENTS: (2.0, 4.0, 8.0),
    SWEEP_PERIOD: (1.0, 2.0, 4.0),
    SWEEP_TAIL_P: (1.4, 1.8, 2.0),
}

DESK_ROUNDS = 10_000
FULL_SCALE_ROUNDS = 30_000
FLOAT_FORMAT = "%.17g"
MIN_SLOPE_POINTS = 3
SLOPE_PRECONDITION_POINTS = 5
SLOPE_PRECONDITION_DECADES = 1.5

SUMMARY_FILE = "summary.csv"
AGGREGATED_FILE = "summary_aggregated.csv"
XLSX_FILE = "summary.xlsx"
PLOT_SCRIPT_FILE = "plot_curves.gp"

SUMMARY_COLUMNS = [
    "sweep_param",
    "value",
    "repetition",
    "seed",
    "T",
    "global_error",
    "final_consensus_max",
    "mean_clip_fraction",
    "fitted_slope",
]
CURVE_COLUMNS = [
    "t",
    "f_gap_avg_clients",
    "consensus_max",
    "consensus_bound",
    "alpha_t",
    "lambda_t",
    "clip_fraction",
]


class ConfigError(ValueError):
    """Raised for unreadable or invalid experiment configurations."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None) -> None:
        super().__init__(message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    clients: int = 4
    period: int = 2
    rounds: int = DESK_ROUNDS
    full_scale: bool = False
    tail_p: float = 1.8
    gamma: float = 1.01
    mu: Optional[float] = None
    kappa: Optional[float] = None
    mirror: str = MIRROR_ENTROPIC
    domain: str = DOMAIN_SIMPLEX
    dimension: int = 2
    box_lower: float = -1.0
    box_upper: float = 1.0
    ball_radius: float = 1.0
    problem: str = PROBLEM_REGRESSION
    seed: int = 0
    repetitions: int = 5
    schedule_variant: str = VARIANT_BOUNDED_GRADIENT
    noise: str = NOISE_PARETO
    pareto_beta: float = 2.0
    pareto_scale: float = 0.5
    gaussian_std: float = 1.0
    sweep: str = SWEEP_NONE
    sweep_values: tuple[float, ...] = ()
    checkpoint_stride: int = 1000
    assertion_mode: str = "strict"
    record_states: str = "sync"
    confidence_delta: float = DEFAULT_CONFIDENCE_DELTA
    workers: Optional[int] = None
    out_dir: Path = field(default_factory=default_out_dir)

    @property
    def sweep_points(self) -> tuple[float, ...]:
        if self.sweep == SWEEP_NONE:
            return ()
        return self.sweep_values or DEFAULT_SWEEP_VALUES[self.sweep]

    @property
    def schedule_pair(self) -> tuple[float, float]:
        """(kappa, mu), falling back to the minimax pair for tail_p."""
        kappa, mu = minimax_pair(self.tail_p)
        return (self.kappa if self.kappa is not None else kappa, self.mu if self.mu is not None else mu)


def _parse_int(raw: str) -> int:
    return int(raw)


def _parse_float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"ожидалось конечное число, получено {raw!r}")
    return value


def _parse_optional_int(raw: str) -> Optional[int]:
    return None if raw.lower() in {"", "auto", "none"} else int(raw)


def _parse_optional_float(raw: str) -> Optional[float]:
    return None if raw.lower() in {"", "auto", "none"} else _parse_float(raw)


def _parse_flag(raw: str) -> bool:
    parsed = parse_bool(raw)
    if parsed is None:
        raise ValueError(f"ожидалось логическое значение, получено {raw!r}")
    return parsed


def _parse_word(raw: str) -> str:
    return raw.strip().lower()


def parse_values(raw: str) -> tuple[float, ...]:
    return tuple(_parse_float(item.strip()) for item in raw.split(",") if item.strip())


CONFIG_PARSERS: dict[str, Callable[[str], Any]] = {
    "clients": _parse_int,
    "period": _parse_int,
    "rounds": _parse_int,
    "full_scale": _parse_flag,
    "tail_p": _parse_float,
    "gamma": _parse_float,
    "mu": _parse_optional_float,
    "kappa": _parse_optional_float,
    "mirror": _parse_word,
    "domain": _parse_word,
    "dimension": _parse_int,
    "box_lower": _parse_float,
    "box_upper": _parse_float,
    "ball_radius": _parse_float,
    "problem": _parse_word,
    "seed": _parse_int,
    "repetitions": _parse_int,
    "schedule_variant": _parse_word,
    "noise": _parse_word,
    "pareto_beta": _parse_float,
    "pareto_scale": _parse_float,
    "gaussian_std": _parse_float,
    "sweep": _parse_word,
    "sweep_values": parse_values,
    "checkpoint_stride": _parse_int,
    "assertion_mode": _parse_word,
    "record_states": _parse_word,
    "confidence_delta": _parse_float,
    "workers": _parse_optional_int,
    "out_dir": Path,
}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, Any] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_number}: ожидалась строка вида key = value", line=line_number)
        key, raw_value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in CONFIG_PARSERS:
            raise ConfigError(f"{source}:{line_number}: неизвестный ключ {key!r}", field=key, line=line_number)
        if key in values:
            raise ConfigError(f"{source}:{line_number}: ключ {key!r} указан повторно", field=key, line=line_number)
        try:
            values[key] = CONFIG_PARSERS[key](raw_value)
        except ValueError as exc:
            raise ConfigError(
                f"{source}:{line_number}: некорректное значение {key} = {raw_value!r}: {exc}",
                field=key,
                line=line_number,
            ) from exc

    if values.get("full_scale") and "rounds" not in values:
        values["rounds"] = FULL_SCALE_ROUNDS
    config = ExperimentConfig(**values)
    validate_experiment(config)
    return config


def load_config(path: Path | str) -> ExperimentConfig:
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Не удалось прочитать конфигурацию {config_path}: {exc}") from exc
    config = parse_config_text(text, source=str(config_path))
    logger.info("Конфигурация загружена: %s", config_path)
    return config


def _require(condition: bool, message: str, field_name: str) -> None:
    if not condition:
        raise ConfigError(f"Некорректное поле {field_name}: {message}", field=field_name)


def _check_schedule(config: ExperimentConfig, p: float) -> None:
    try:
        kappa, mu = minimax_pair(p)
        params = ScheduleParams(
            p=p,
            mu=config.mu if config.mu is not None else mu,
            kappa=config.kappa if config.kappa is not None else kappa,
            gamma=config.gamma,
            scale_constant=1.0,
            variant=config.schedule_variant,
        )
        validate_schedule(params)
    except ScheduleError as exc:
        raise ConfigError(f"Некорректное поле {exc.field}: {exc}", field=exc.field) from exc


def validate_experiment(config: ExperimentConfig) -> None:
    """Raise ConfigError naming the first invalid field."""
    _require(config.clients >= 1, "нужен хотя бы один клиент", "clients")
    _require(config.period >= 1, "период должен быть >= 1", "period")
    _require(config.rounds >= 1, "число раундов должно быть >= 1", "rounds")
    _require(config.dimension >= 1, "размерность должна быть >= 1", "dimension")
    _require(config.repetitions >= 1, "нужно хотя бы одно повторение", "repetitions")
    _require(config.seed >= 0, "seed не может быть отрицательным", "seed")
    _require(config.checkpoint_stride >= 0, "шаг контрольных точек не может быть отрицательным", "checkpoint_stride")
    _require(config.mirror in SUPPORTED_MIRRORS, f"ожидалось одно из {sorted(SUPPORTED_MIRRORS)}", "mirror")
    _require(config.domain in SUPPORTED_DOMAINS, f"ожидалось одно из {sorted(SUPPORTED_DOMAINS)}", "domain")
    _require(config.problem in SUPPORTED_PROBLEMS, f"ожидалось одно из {sorted(SUPPORTED_PROBLEMS)}", "problem")
    _require(config.noise in SUPPORTED_NOISE, f"ожидалось одно из {sorted(SUPPORTED_NOISE)}", "noise")
    _require(config.sweep in SUPPORTED_SWEEPS, f"ожидалось одно из {sorted(SUPPORTED_SWEEPS)}", "sweep")
    _require(
        config.assertion_mode in SUPPORTED_ASSERTION_MODES,
        f"ожидалось одно из {sorted(SUPPORTED_ASSERTION_MODES)}",
        "assertion_mode",
    )
    _require(config.record_states in SUPPORTED_RECORDING, f"ожидалось одно из {sorted(SUPPORTED_RECORDING)}", "record_states")
    _require(config.box_lower <= config.box_upper, "box_lower превышает box_upper", "box_lower")
    _require(config.ball_radius > 0, "радиус должен быть положительным", "ball_radius")
    _require(0.0 < config.confidence_delta < 1.0, "нужно 0 < delta < 1", "confidence_delta")
    _require(config.workers is None or config.workers >= 1, "число потоков должно быть >= 1", "workers")
    _require(
        not (config.schedule_variant == VARIANT_BOUNDED_GRADIENT and config.domain == DOMAIN_FREE),
        "правило ограниченного градиента требует ограниченной области",
        "domain",
    )
    try:
        check_pairing(MirrorGeometry(config.mirror, config.dimension), build_domain(config))
    except (GeometryError, DomainError) as exc:
        raise ConfigError(f"Некорректное поле mirror: {exc}", field="mirror") from exc
    try:
        build_noise(config, config.tail_p)
    except NoiseModelError as exc:
        raise ConfigError(f"Некорректное поле noise: {exc}", field="noise") from exc

    if config.sweep != SWEEP_NONE:
        _require(bool(config.sweep_points), "список значений пуст", "sweep_values")
    for value in config.sweep_points:
        if config.sweep in {SWEEP_CLIENTS, SWEEP_PERIOD}:
            _require(value >= 1 and float(value).is_integer(), f"ожидалось целое >= 1, получено {value}", "sweep_values")
        if config.sweep == SWEEP_PERIOD:
            _require(
                (config.period * config.rounds) % int(value) == 0,
                f"период {_format_value(value)} не делит число итераций {config.period * config.rounds}",
                "sweep_values",
            )
        if config.sweep == SWEEP_TAIL_P:
            _check_schedule(config, value)
    _check_schedule(config, config.tail_p)


def build_domain(config: ExperimentConfig) -> Domain:
    n = config.dimension
    if config.domain == DOMAIN_SIMPLEX:
        return probability_simplex(n)
    if config.domain == DOMAIN_BOX:
        return box([config.box_lower] * n, [config.box_upper] * n)
    if config.domain == DOMAIN_BALL:
        return euclidean_ball([0.0] * n, config.ball_radius)
    return full_space(n)


def build_noise(config: ExperimentConfig, p: float) -> NoiseModel:
    if config.noise == NOISE_PARETO:
        return shifted_pareto(beta=config.pareto_beta, x_scale=config.pareto_scale, p_moment=p)
    if config.noise == NOISE_GAUSSIAN:
        return gaussian(std=config.gaussian_std, p_moment=p)
    return no_noise()


def build_problem(config: ExperimentConfig, seed: int) -> Problem:
    if config.problem == PROBLEM_REGRESSION:
        return generate_regression(config.clients, config.dimension, seed)
    rng = np.random.default_rng(seed)
    return quadratic(rng.uniform(-1.0, 1.0, size=(config.clients, config.dimension)))


def apply_sweep_value(config: ExperimentConfig, value: float) -> ExperimentConfig:
    if config.sweep == SWEEP_CLIENTS:
        return dataclasses.replace(config, clients=int(value))
    if config.sweep == SWEEP_PERIOD:
        # Same number of iterations for every period: P * rounds stays at the base value.
        period = int(value)
        return dataclasses.replace(config, period=period, rounds=config.period * config.rounds // period)
    if config.sweep == SWEEP_TAIL_P:
        return dataclasses.replace(config, tail_p=float(value))
    return config


def _resolve_scale_constant(
    config: ExperimentConfig,
    geometry: MirrorGeometry,
    domain: Domain,
    problem: Problem,
    noise: NoiseModel,
    clock: CommClock,
    optimum: Optimum,
    kappa: float,
    mu: float,
    master_seed: int,
) -> float:
    if config.schedule_variant == VARIANT_BOUNDED_GRADIENT:
        try:
            bound = gradient_bound(problem, domain)
        except ProblemError as exc:
            raise ConfigError(f"Некорректное поле domain: {exc}", field="domain") from exc
        if not bound > 0:
            raise ConfigError("Граница градиента G равна нулю: 2G не задает уровень клиппинга", field="problem")
        return 2.0 * bound

    draft = FederationConfig(
        clock=clock,
        schedule=ScheduleParams(p=config.tail_p, mu=mu, kappa=kappa, gamma=config.gamma, scale_constant=1.0, variant=VARIANT_SMOOTH),
        geometry=geometry,
        domain=domain,
        problem=problem,
        noise=noise,
        master_seed=master_seed,
    )
    initial_points = validate_config(draft)
    initial_radius = max(math.sqrt(2.0 * bregman(geometry, optimum.point, point)) for point in initial_points)
    initial_gradient = max(
        float(np.linalg.norm(gradient(problem, agent, point))) for agent, point in enumerate(initial_points)
    )
    constants = resolve_smoothness_scale(
        p=config.tail_p,
        mu=mu,
        kappa=kappa,
        gamma=config.gamma,
        clock=clock,
        agents=config.clients,
        smoothness=smoothness_constant(problem),
        initial_radius=initial_radius,
        initial_gradient=initial_gradient,
        sigma=resolve_sigma(noise, config.dimension),
        delta=config.confidence_delta,
    )
    final_params = ScheduleParams(
        p=config.tail_p, mu=mu, kappa=kappa, gamma=config.gamma,
        scale_constant=constants.scale_constant, variant=VARIANT_SMOOTH,
    )
    bound = ergodic_error_bound(
        clock.horizon, alpha(final_params, clock.horizon), config.clients, initial_radius, constants.constant_a
    )
    logger.info(
        "Константы правила гладкости: A=%.6g, c*=%.6g, итераций=%s, сошлось=%s, граница ошибки=%.6g",
        constants.constant_a, constants.scale_constant, constants.iterations, constants.converged, bound,
    )
    return constants.scale_constant


def build_federation_config(
    config: ExperimentConfig,
    repetition: int = 0,
    max_workers: Optional[int] = None,
) -> tuple[FederationConfig, Optimum]:
    """Engine configuration for one repetition; seed = config.seed + repetition."""
    master_seed = config.seed + repetition
    domain = build_domain(config)
    geometry = MirrorGeometry(config.mirror, config.dimension)
    problem = build_problem(config, master_seed)
    noise = build_noise(config, config.tail_p)
    clock = CommClock(period=config.period, rounds=config.rounds)
    try:
        optimum = solve_optimum(problem, domain)
    except ProblemError as exc:
        raise ConfigError(f"Некорректное поле problem: {exc}", field="problem") from exc
    kappa, mu = config.schedule_pair
    scale_constant = _resolve_scale_constant(config, geometry, domain, problem, noise, clock, optimum, kappa, mu, master_seed)
    schedule = ScheduleParams(
        p=config.tail_p,
        mu=mu,
        kappa=kappa,
        gamma=config.gamma,
        scale_constant=scale_constant,
        variant=config.schedule_variant,
    )
    federation_config = FederationConfig(
        clock=clock,
        schedule=schedule,
        geometry=geometry,
        domain=domain,
        problem=problem,
        noise=noise,
        master_seed=master_seed,
        assertion_mode=config.assertion_mode,
        record_states=config.record_states,
        checkpoint_stride=config.checkpoint_stride,
        max_workers=max_workers if max_workers is not None else config.workers,
        optimal_value=optimum.value,
    )
    return federation_config, optimum


def rate_slope(curve: Sequence[tuple[int, float]]) -> float:
    """Least-squares slope of log(error) against log(T') over the tail half of the curve."""
    usable = [(float(t), float(error)) for t, error in curve if t > 0 and error > 0 and math.isfinite(error)]
    if len(usable) < MIN_SLOPE_POINTS:
        raise ValueError(
            f"Для оценки наклона нужно хотя бы {MIN_SLOPE_POINTS} положительных точек, получено {len(usable)}"
        )
    usable.sort()
    tail = usable[len(usable) // 2:]
    if len(tail) < MIN_SLOPE_POINTS:
        tail = usable[-MIN_SLOPE_POINTS:]
    if len(usable) < SLOPE_PRECONDITION_POINTS or math.log10(usable[-1][0] / usable[0][0]) < SLOPE_PRECONDITION_DECADES:
        logger.debug("Кривая короче рекомендуемой: %s точек, диапазон %s..%s", len(usable), usable[0][0], usable[-1][0])
    log_t = np.log([t for t, _ in tail])
    log_error = np.log([error for _, error in tail])
    if np.all(log_t == log_t[0]):
        raise ValueError("Все контрольные точки имеют одинаковое T'")
    slope = np.polyfit(log_t, log_error, 1)[0]
    return float(slope)


def curve_frame(run: FederationRun) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "t": run.t,
            "f_gap_avg_clients": run.f_gap,
            "consensus_max": run.consensus_max,
            "consensus_bound": run.consensus_bound,
            "alpha_t": run.alpha,
            "lambda_t": run.lambda_,
            "clip_fraction": run.clip_fraction,
        },
        columns=CURVE_COLUMNS,
    )


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    return path


def read_csv(path: Path | str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def curve_file_name(sweep_param: str, value: float, repetition: int) -> str:
    if sweep_param == SWEEP_NONE:
        return f"curve_rep{repetition}.csv"
    return f"curve_{sweep_param}_{_format_value(value)}_rep{repetition}.csv"


@dataclass(frozen=True)
class RunSummary:
    sweep_param: str
    value: float
    repetition: int
    seed: int
    horizon: int
    global_error: float
    final_consensus_max: float
    mean_clip_fraction: float
    fitted_slope: float
    curve: pd.DataFrame = field(repr=False, compare=False)

    def as_row(self) -> dict[str, Any]:
        return {
            "sweep_param": self.sweep_param,
            "value": self.value,
            "repetition": self.repetition,
            "seed": self.seed,
            "T": self.horizon,
            "global_error": self.global_error,
            "final_consensus_max": self.final_consensus_max,
            "mean_clip_fraction": self.mean_clip_fraction,
            "fitted_slope": self.fitted_slope,
        }


@dataclass
class ExperimentResult:
    summary: pd.DataFrame
    aggregated: pd.DataFrame
    runs: list[RunSummary]
    out_dir: Path
    summary_path: Path
    aggregated_path: Path
    curve_paths: list[Path]
    plot_script_path: Path
    xlsx_path: Optional[Path] = None


def run_point(
    config: ExperimentConfig,
    sweep_param: str,
    value: float,
    repetition: int,
    max_workers: Optional[int] = None,
) -> RunSummary:
    """Execute one (sweep value, repetition) pair and reduce it to summary metrics."""
    point = apply_sweep_value(config, value)
    federation_config, _ = build_federation_config(point, repetition, max_workers=max_workers)
    run = run_federation(federation_config)
    if run.checkpoints:
        error = run.checkpoints[-1][1]
    else:
        error = global_error(run, federation_config.problem, run.f_star)
    try:
        slope = rate_slope(run.checkpoints)
    except ValueError:
        slope = float("nan")
    logger.info(
        "Точка %s=%s, повторение %s: ошибка=%.6g, наклон=%.4f",
        sweep_param, _format_value(value), repetition, error, slope,
    )
    return RunSummary(
        sweep_param=sweep_param,
        value=float(value),
        repetition=repetition,
        seed=federation_config.master_seed,
        horizon=run.horizon,
        global_error=error,
        final_consensus_max=float(run.consensus_max[-1]),
        mean_clip_fraction=float(np.mean(run.clip_fraction)),
        fitted_slope=slope,
        curve=curve_frame(run),
    )


def aggregate_summary(summary: pd.DataFrame) -> pd.DataFrame:
    """Mean and spread over repetitions for every sweep value."""
    grouped = summary.groupby(["sweep_param", "value"], sort=False)
    aggregated = grouped.agg(
        repetitions=("global_error", "size"),
        global_error_mean=("global_error", "mean"),
        global_error_std=("global_error", "std"),
        final_consensus_max_mean=("final_consensus_max", "mean"),
        mean_clip_fraction=("mean_clip_fraction", "mean"),
        fitted_slope_mean=("fitted_slope", "mean"),
    ).reset_index()
    aggregated["global_error_std"] = aggregated["global_error_std"].fillna(0.0)
    return aggregated


def write_plot_script(out_dir: Path, curve_paths: Sequence[Path], sweep_param: str) -> Path:
    """Companion gnuplot script for the emitted curve files; it is never executed here."""
    lines = [
        "# gnuplot -persist plot_curves.gp",
        'set datafile separator ","',
        "set key autotitle columnhead",
        "set logscale xy",
        'set xlabel "t"',
        'set ylabel "f(x_bar_t) - f*"',
        f'set title "{sweep_param}"',
    ]
    if curve_paths:
        plots = [f'"{path.name}" using 1:2 with lines title "{path.stem}"' for path in curve_paths]
        lines.append("plot " + ", \\\n     ".join(plots))
    target = out_dir / PLOT_SCRIPT_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return target


def write_xlsx(summary: pd.DataFrame, aggregated: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        summary.to_excel(writer, sheet_name="summary", index=False)
        aggregated.to_excel(writer, sheet_name="aggregated", index=False)
    return path


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    write_excel: bool = False,
) -> ExperimentResult:
    """Run every (sweep value, repetition) pair and write curves plus summaries."""
    target_dir = Path(out_dir) if out_dir is not None else config.out_dir
    sweep_param = config.sweep
    values = config.sweep_points or (0.0,)
    tasks = [(value, repetition) for value in values for repetition in range(config.repetitions)]
    worker_count = resolve_max_workers(config.workers)
    logger.info(
        "Эксперимент: параметр=%s, значений=%s, повторений=%s, потоков=%s, каталог=%s",
        sweep_param, len(values), config.repetitions, worker_count, target_dir,
    )

    if worker_count > 1 and len(tasks) > 1:
        with concurrent.futures.ThreadPoolExecutor(
            max_workers=min(worker_count, len(tasks)),
            thread_name_prefix="fedsmd-sweep",
        ) as executor:
            futures = [
                executor.submit(run_point, config, sweep_param, value, repetition, 1)
                for value, repetition in tasks
            ]
            # Join barrier; results are taken in task order.
            runs = [future.result() for future in futures]
    else:
        runs = [run_point(config, sweep_param, value, repetition, worker_count) for value, repetition in tasks]

    curve_paths = [
        write_csv(item.curve, target_dir / curve_file_name(sweep_param, item.value, item.repetition))
        for item in runs
    ]
    summary = pd.DataFrame([item.as_row() for item in runs], columns=SUMMARY_COLUMNS)
    aggregated = aggregate_summary(summary)
    summary_path = write_csv(summary, target_dir / SUMMARY_FILE)
    aggregated_path = write_csv(aggregated, target_dir / AGGREGATED_FILE)
    plot_script_path = write_plot_script(target_dir, curve_paths, sweep_param)
    xlsx_path = write_xlsx(summary, aggregated, target_dir / XLSX_FILE) if write_excel else None
    logger.info("Эксперимент завершен: %s запусков, сводка %s", len(runs), summary_path)
    return ExperimentResult(
        summary=summary,
        aggregated=aggregated,
        runs=runs,
        out_dir=target_dir,
        summary_path=summary_path,
        aggregated_path=aggregated_path,
        curve_paths=curve_paths,
        plot_script_path=plot_script_path,
        xlsx_path=xlsx_path,
    )


AUDIT_SEED = 20240917
AUDIT_TAIL_P = 1.8
AUDIT_GAMMA = 1.01
AUDIT_SLACK = 1.2
AUDIT_SERIES_SHORT = 10_000
AUDIT_SERIES_LONG = 100_000
AUDIT_SERIES_CHANGE = 0.05
AUDIT_SCAN_HORIZON = 1_000_000
AUDIT_CONSENSUS_HORIZON = 5_000
AUDIT_FREE_SCALE = 10.0
AUDIT_PAIRINGS = (
    (MIRROR_ENTROPIC, DOMAIN_SIMPLEX),
    (MIRROR_EUCLIDEAN, DOMAIN_SIMPLEX),
    (MIRROR_EUCLIDEAN, DOMAIN_BOX),
    (MIRROR_EUCLIDEAN, DOMAIN_BALL),
    (MIRROR_EUCLIDEAN, DOMAIN_FREE),
)


@dataclass(frozen=True)
class AuditCheck:
    name: str
    passed: bool
    detail: str


def audit_clipping_bias(n_samples: int = 1_000_000, levels: Sequence[float] = (2.0, 4.0, 8.0)) -> list[AuditCheck]:
    """Monte-Carlo bias and second moment of the clipped Pareto estimator against their bounds."""
    noise = shifted_pareto(beta=2.0, x_scale=0.5, p_moment=AUDIT_TAIL_P)
    problem = quadratic([[0.0, 0.0]])
    oracle = StochasticOracle(problem=problem, noise=noise, master_seed=AUDIT_SEED)
    sigma = certify_sigma(noise, AUDIT_TAIL_P, problem.dimension)
    point = np.array([0.5, 0.0])
    checks = []
    for index, level in enumerate(levels):
        report = clipped_estimator_diagnostic(
            oracle, point, level, AUDIT_TAIL_P, sigma, n_samples, diagnostic_stream(AUDIT_SEED, purpose=index + 2)
        )
        checks.append(AuditCheck(
            name=f"clipping_bias[level={_format_value(level)}]",
            passed=report.holds(AUDIT_SLACK),
            detail=(
                f"bias={report.bias_norm:.4g} <= {report.bias_bound:.4g}, "
                f"var={report.second_moment:.4g} <= {report.second_moment_bound:.4g}"
            ),
        ))
    return checks


def audit_schedules(scan_horizon: int = AUDIT_SCAN_HORIZON, tail_values: Sequence[float] = (1.2, 1.5, 1.8, 2.0)) -> list[AuditCheck]:
    checks = []
    for p in tail_values:
        kappa, mu = minimax_pair(p)
        tight = abs(kappa - (mu + 0.5)) <= 1e-12 and abs(kappa - (1.0 - mu * (p - 1.0))) <= 1e-12
        params = ScheduleParams(p=p, mu=mu, kappa=kappa, gamma=AUDIT_GAMMA, scale_constant=2.0)
        try:
            validate_schedule(params)
            valid = True
        except ScheduleError:
            valid = False
        alphas = alpha_array(params, scan_horizon)
        lambdas = lambda_array(params, scan_horizon)
        products = float(np.max(alphas * lambdas))
        monotone = bool(np.all(np.diff(alphas) <= 1e-15 * alphas[1:]) and np.all(np.diff(lambdas) >= 0.0))
        checks.append(AuditCheck(
            name=f"schedule[p={_format_value(p)}]",
            passed=tight and valid and monotone and products <= 1.0 + 1e-12,
            detail=f"kappa={kappa:.6f}, mu={mu:.6f}, max alpha*lambda={products:.6f}, monotone={monotone}",
        ))
    return checks


def audit_series(
    short_horizon: int = AUDIT_SERIES_SHORT,
    long_horizon: int = AUDIT_SERIES_LONG,
    period: int = 2,
) -> list[AuditCheck]:
    """Partial sums C0..C5 must settle; C2 decays too slowly for a ratio test and is bounded termwise."""
    kappa, mu = minimax_pair(AUDIT_TAIL_P)
    params = ScheduleParams(p=AUDIT_TAIL_P, mu=mu, kappa=kappa, gamma=AUDIT_GAMMA, scale_constant=2.0)
    clock = CommClock(period=period, rounds=1)
    short = series_diagnostics(params, clock, short_horizon).as_dict()
    long = series_diagnostics(params, clock, long_horizon).as_dict()
    checks = []
    for name in ("C0", "C1", "C3", "C4", "C5"):
        change = (long[name] - short[name]) / long[name] if long[name] > 0 else 0.0
        checks.append(AuditCheck(
            name=f"series[{name}]",
            passed=0.0 <= change < AUDIT_SERIES_CHANGE,
            detail=f"{short[name]:.6g} -> {long[name]:.6g} ({change:.2%})",
        ))
    alphas = alpha_array(params, long_horizon)
    lambdas = lambda_array(params, long_horizon)
    terms = alphas * np.power(lambdas, 1.0 - AUDIT_TAIL_P)
    majorant = c2_term_majorant(params, long_horizon)
    increment = long["C2"] - short["C2"]
    tail_bound = float(np.sum(majorant[short_horizon:]))
    checks.append(AuditCheck(
        name="series[C2]",
        passed=bool(np.all(terms <= majorant * (1.0 + 1e-12))) and increment <= tail_bound * (1.0 + 1e-12),
        detail=f"{short['C2']:.6g} -> {long['C2']:.6g}, increment {increment:.4g} <= {tail_bound:.4g}",
    ))
    return checks


def _audit_problem(rng: np.random.Generator, domain: Domain, agents: int, seed: int) -> Problem:
    if domain.kind == DOMAIN_SIMPLEX:
        return generate_regression(agents, domain.dimension, seed)
    return quadratic(rng.uniform(-1.0, 1.0, size=(agents, domain.dimension)))


def audit_consensus(configs: int = 20, horizon: int = AUDIT_CONSENSUS_HORIZON, seed: int = AUDIT_SEED) -> list[AuditCheck]:
    """Randomized engine runs in record mode; any consensus or displacement violation fails."""
    rng = np.random.default_rng(seed)
    checks = []
    for index in range(configs):
        mirror, domain_kind = AUDIT_PAIRINGS[index % len(AUDIT_PAIRINGS)]
        dimension = int(rng.integers(2, 5))
        agents = int(rng.integers(1, 9))
        period = int(rng.choice([1, 2, 5]))
        noise = shifted_pareto(p_moment=AUDIT_TAIL_P) if rng.random() < 0.5 else gaussian(p_moment=AUDIT_TAIL_P)
        domain = build_domain(ExperimentConfig(domain=domain_kind, dimension=dimension))
        problem = _audit_problem(rng, domain, agents, seed + index)
        scale = AUDIT_FREE_SCALE if domain_kind == DOMAIN_FREE else 2.0 * gradient_bound(problem, domain)
        kappa, mu = minimax_pair(AUDIT_TAIL_P)
        federation_config = FederationConfig(
            clock=CommClock(period=period, rounds=max(1, (horizon - 1) // period)),
            schedule=ScheduleParams(p=AUDIT_TAIL_P, mu=mu, kappa=kappa, gamma=AUDIT_GAMMA, scale_constant=scale),
            geometry=MirrorGeometry(mirror, dimension),
            domain=domain,
            problem=problem,
            noise=noise,
            master_seed=seed + index,
            initializer="random",
            assertion_mode=ASSERT_RECORD,
            optimal_value=0.0,
        )
        try:
            run = run_federation(federation_config)
        except (FederationConfigError, GeometryError, DomainError) as exc:
            checks.append(AuditCheck(name=f"consensus[{index}]", passed=False, detail=str(exc)))
            continue
        passed = run.consensus_violations == 0 and run.displacement_violations == 0
        checks.append(AuditCheck(
            name=f"consensus[{index}]",
            passed=passed,
            detail=(
                f"{mirror}/{domain_kind}, m={agents}, P={period}, noise={noise.kind}, "
                f"worst slack={run.worst_consensus_slack:.3g}"
            ),
        ))
    return checks


def audit_clip_contract(samples: int = 100_000, seed: int = AUDIT_SEED) -> AuditCheck:
    rng = np.random.default_rng(seed)
    vectors = rng.standard_cauchy(size=(samples, 3))
    levels = rng.uniform(1e-3, 10.0, size=samples)
    worst = 0.0
    for vector, level in zip(vectors, levels):
        report = clip(vector, level)
        worst = max(worst, float(np.linalg.norm(report.clipped_vector)) - level)
    return AuditCheck(name="clip_contract", passed=worst <= 0.0, detail=f"max(||clip|| - level) = {worst:.3g}")


def run_audit(quick: bool = False) -> list[AuditCheck]:
    """Full diagnostic suite; ``quick`` shrinks the sample sizes for smoke runs."""
    checks: list[AuditCheck] = []
    checks.extend(audit_clipping_bias(n_samples=100_000 if quick else 1_000_000))
    checks.extend(audit_schedules(scan_horizon=10_000 if quick else AUDIT_SCAN_HORIZON))
    checks.extend(audit_series())
    checks.extend(audit_consensus(configs=5 if quick else 20, horizon=500 if quick else AUDIT_CONSENSUS_HORIZON))
    checks.append(audit_clip_contract(samples=10_000 if quick else 100_000))
    failed = [check.name for check in checks if not check.passed]
    if failed:
        logger.error("Аудит: %s проверок не пройдено: %s", len(failed), ", ".join(failed))
    else:
        logger.info("Аудит: все %s проверок пройдены", len(checks))
    return checks


def format_audit_table(checks: Sequence[AuditCheck]) -> str:
    width = max((len(check.name) for check in checks), default=4)
    rows = [f"{'check'.ljust(width)}  result  detail"]
    for check in checks:
        rows.append(f"{check.name.ljust(width)}  {'PASS' if check.passed else 'FAIL':<6}  {check.detail}")
    return "\n".join(rows)


def rate_summary(p: float, horizon: int, gamma: float) -> str:
    return (
        f"theoretical exponent (1-p)/(2p) = {rate_exponent(p):.4f}, "
        f"rate shape T^((1-p)/(2p)) log^gamma T at T={horizon}: {rate_shape(horizon, p, gamma):.6g}"
    )
