"""Command-line entry point: run, sweep, audit and solve."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from domains import DomainError
from experiments import (
    SUPPORTED_SWEEPS,
    SWEEP_NONE,
    ConfigError,
    ExperimentConfig,
    build_domain,
    build_federation_config,
    format_audit_table,
    load_config,
    parse_config_text,
    parse_values,
    rate_summary,
    run_audit,
    run_experiment,
    validate_experiment,
)
from federation import ConsensusViolation, FederationConfigError
from geometry import GeometryError
from logger import attach_console_handler, logger
from noise import NoiseModelError
from problems import ProblemError, load_instance, save_instance, solve_optimum
from schedules import ScheduleError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSERTION = 2

VALIDATION_ERRORS = (
    ConfigError,
    ScheduleError,
    DomainError,
    GeometryError,
    NoiseModelError,
    ProblemError,
    FederationConfigError,
)


def _load(path: Optional[str]) -> ExperimentConfig:
    if path:
        return load_config(path)
    return parse_config_text("")


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    changes: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "repetitions", None) is not None:
        changes["repetitions"] = args.repetitions
    if getattr(args, "sweep", None) is not None:
        changes["sweep"] = args.sweep
    if getattr(args, "values", None) is not None:
        changes["sweep_values"] = parse_values(args.values)
    if not changes:
        return config
    updated = dataclasses.replace(config, **changes)
    validate_experiment(updated)
    return updated


def _print_result_paths(summary_path: Path, plot_script_path: Path, xlsx_path: Optional[Path]) -> None:
    print(f"Сводка: {summary_path}")
    print(f"Скрипт графиков: {plot_script_path}")
    if xlsx_path is not None:
        print(f"XLSX: {xlsx_path}")


def command_run(args: argparse.Namespace) -> int:
    config = dataclasses.replace(_apply_overrides(_load(args.config), args), sweep=SWEEP_NONE, sweep_values=())
    result = run_experiment(config, out_dir=args.out_dir, write_excel=args.xlsx)
    print(result.summary.to_string(index=False))
    print(rate_summary(config.tail_p, int(result.summary["T"].iloc[0]), config.gamma))
    _print_result_paths(result.summary_path, result.plot_script_path, result.xlsx_path)
    return EXIT_OK


def command_sweep(args: argparse.Namespace) -> int:
    config = _apply_overrides(_load(args.config), args)
    if config.sweep == SWEEP_NONE:
        raise ConfigError("Для sweep нужно указать параметр sweep в конфигурации или через --sweep", field="sweep")
    result = run_experiment(config, out_dir=args.out_dir, write_excel=args.xlsx)
    print(result.aggregated.to_string(index=False))
    _print_result_paths(result.summary_path, result.plot_script_path, result.xlsx_path)
    return EXIT_OK


def command_audit(args: argparse.Namespace) -> int:
    checks = run_audit(quick=args.quick)
    print(format_audit_table(checks))
    return EXIT_OK if all(check.passed for check in checks) else EXIT_ASSERTION


def command_solve(args: argparse.Namespace) -> int:
    config = _apply_overrides(_load(args.config), args)
    domain = build_domain(config)
    if args.instance:
        problem = load_instance(args.instance)
        optimum = solve_optimum(problem, domain)
    else:
        federation_config, optimum = build_federation_config(config, repetition=args.repetition)
        problem = federation_config.problem
    if args.save_instance:
        print(f"Экземпляр сохранен: {save_instance(problem, args.save_instance)}")
    with np.printoptions(precision=17):
        print(f"x* = {optimum.point}")
    print(f"f* = {optimum.value:.17g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Симулятор федеративного стохастического зеркального спуска с клиппингом")
    parser.add_argument("--verbose", action="store_true", help="выводить журнал в консоль")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("config", nargs="?", help="файл конфигурации key = value")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--workers", type=int)
        sub.add_argument("--repetitions", type=int)

    run_parser = subparsers.add_parser("run", help="одиночный запуск по конфигурации")
    add_common(run_parser)
    run_parser.add_argument("--out-dir", type=Path)
    run_parser.add_argument("--xlsx", action="store_true", help="дополнительно сохранить сводку в XLSX")
    run_parser.set_defaults(handler=command_run)

    sweep_parser = subparsers.add_parser("sweep", help="серия запусков по m, P или p")
    add_common(sweep_parser)
    sweep_parser.add_argument("--sweep", choices=sorted(SUPPORTED_SWEEPS - {SWEEP_NONE}))
    sweep_parser.add_argument("--values", help="значения через запятую, например 2,4,8")
    sweep_parser.add_argument("--out-dir", type=Path)
    sweep_parser.add_argument("--xlsx", action="store_true")
    sweep_parser.set_defaults(handler=command_sweep)

    audit_parser = subparsers.add_parser("audit", help="диагностика инвариантов")
    audit_parser.add_argument("--quick", action="store_true", help="уменьшенные объемы выборок")
    audit_parser.set_defaults(handler=command_audit)

    solve_parser = subparsers.add_parser("solve", help="вывести x* и f* для экземпляра")
    add_common(solve_parser)
    solve_parser.add_argument("--instance", help="файл экземпляра: признаки и цель в строке")
    solve_parser.add_argument("--save-instance", help="сохранить сгенерированный экземпляр")
    solve_parser.add_argument("--repetition", type=int, default=0)
    solve_parser.set_defaults(handler=command_solve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        attach_console_handler()
    try:
        return int(args.handler(args))
    except VALIDATION_ERRORS as exc:
        logger.error("Ошибка конфигурации: %s", exc)
        print(f"Ошибка конфигурации: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsensusViolation as exc:
        logger.error("Запуск прерван: %s", exc)
        print(f"Запуск прерван: {exc}", file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
