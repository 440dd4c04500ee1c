"""CLI entry point for mjls-bounds."""

from __future__ import annotations

import logging
import sys
from collections.abc import Callable
from importlib.resources.abc import Traversable
from pathlib import Path
from typing import Any

import click
import structlog
from pydantic import ValidationError

from mjls_bounds.config import (
    ProblemConfig,
    Settings,
    bundled_configs,
    load_problem,
    with_seed,
)
from mjls_bounds.errors import ConfigError, DimensionError, EmptyConstraintError, NumericFlagError
from mjls_bounds.reports import ReportWriter
from mjls_bounds.runs import run_problem

_LOG_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _setup_logging(level: str) -> None:
    """Configure structlog; logs go to stderr so stdout stays clean."""
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.ConsoleRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            _LOG_LEVELS.get(level.upper(), logging.INFO)
        ),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def _load_settings(ctx: click.Context) -> Settings:
    try:
        settings = Settings()
    except ValidationError as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    _setup_logging(ctx.obj.get("log_level") or settings.log_level)
    return settings


def _run_one(
    source: Path | Traversable,
    expected_kind: str | None,
    writer: ReportWriter,
    threads: int,
    oracle_mode: bool,
    seed_override: int | None = None,
) -> int:
    """Run one config and write its report; returns the exit code."""
    log = structlog.get_logger()
    stem = source.name.removesuffix(".json")
    try:
        problem: ProblemConfig = load_problem(source)
        if expected_kind is not None and problem.kind != expected_kind:
            raise ConfigError(f"config kind is {problem.kind!r}, expected {expected_kind!r}")
        if seed_override is not None:
            problem = with_seed(problem, seed_override)
        outcome = run_problem(problem, threads, oracle_mode)
    except (ConfigError, EmptyConstraintError, DimensionError) as e:
        click.echo(f"Configuration error in {source.name}: {e}", err=True)
        return EXIT_CONFIG
    except NumericFlagError as e:
        click.echo(f"Numeric flag in {source.name}: {e}", err=True)
        return EXIT_NUMERIC

    path = writer.write_report(outcome.report, stem)
    for name, (header, rows) in outcome.traces.items():
        writer.write_trace(f"{stem}.{name}", header, rows)
    click.echo(f"{path}")
    for key, verdict in sorted(outcome.report.verdicts.items()):
        click.echo(f"  {key}: {verdict}")

    if outcome.report.flags:
        for flag in outcome.report.flags:
            click.echo(f"Numeric flag in {source.name}: {flag}", err=True)
        return EXIT_NUMERIC
    log.info("run_complete", config=source.name, report=str(path))
    return EXIT_OK


def _run_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Flags shared by every problem subcommand."""
    options = [
        click.option(
            "--config",
            "config",
            required=True,
            type=click.Path(dir_okay=False, path_type=Path),
            help="Problem config (JSON).",
        ),
        click.option(
            "--out",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Output directory (default: MJLS_OUTPUT_DIR).",
        ),
        click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap."),
        click.option("--seed-override", type=int, default=None, help="Replace every seed."),
        click.option("--oracle-mode", is_flag=True, help="Disable pruning for cross-checks."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _command(kind: str) -> Callable[..., None]:
    @click.pass_context
    def command(
        ctx: click.Context,
        config: Path,
        out: Path | None,
        threads: int | None,
        seed_override: int | None,
        oracle_mode: bool,
    ) -> None:
        settings = _load_settings(ctx)
        writer = ReportWriter(out or settings.output_dir)
        code = _run_one(
            config,
            kind,
            writer,
            threads or settings.threads,
            oracle_mode or settings.oracle_mode,
            seed_override,
        )
        sys.exit(code)

    return command


@click.group()
@click.version_option(package_name="mjls-bounds")
@click.option("--log-level", default=None, help="Override MJLS_LOG_LEVEL.")
@click.pass_context
def cli(ctx: click.Context, log_level: str | None) -> None:
    """Stability bounds for constrained switched and Markov jump linear systems."""
    ctx.ensure_object(dict)
    ctx.obj["log_level"] = log_level


cli.command("jsr", help="Joint spectral radius bounds, certificates and probes.")(
    _run_options(_command("jsr"))
)
cli.command("markov", help="Markov measures and Lyapunov exponents.")(
    _run_options(_command("markov"))
)
cli.command("rotation", help="Irrational-rotation counterexamples.")(
    _run_options(_command("rotation"))
)
cli.command("ode", help="Continuous-time flows and the quasi-contraction test.")(
    _run_options(_command("ode"))
)


@cli.command()
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Output directory (default: MJLS_OUTPUT_DIR).",
)
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap.")
@click.option("--oracle-mode", is_flag=True, help="Disable pruning for cross-checks.")
@click.pass_context
def reproduce(ctx: click.Context, out: Path | None, threads: int | None, oracle_mode: bool) -> None:
    """Run every bundled reproduction config."""
    settings = _load_settings(ctx)
    writer = ReportWriter(out or settings.output_dir)
    codes = [
        _run_one(
            source,
            None,
            writer,
            threads or settings.threads,
            oracle_mode or settings.oracle_mode,
        )
        for source in bundled_configs()
    ]
    worst = max(codes, default=EXIT_OK)
    structlog.get_logger().info("reproduce_complete", configs=len(codes), worst=worst)
    sys.exit(worst)


if __name__ == "__main__":
    cli()
