import functools
from pathlib import Path

import click
import numpy as np
from pydantic import ValidationError

from eigenpool.cli import services
from eigenpool.config import RunConfig
from eigenpool.core.exceptions import EigenpoolError
from eigenpool.core.logging import get_logger
from eigenpool.core.schemas import CommandResult

logger = get_logger("cli.commands")

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _finish(result: CommandResult, code: int = 0) -> None:
    click.echo(result.model_dump_json())
    if code:
        raise click.exceptions.Exit(code)


def handle_errors(command):
    """Print failures in the result envelope and exit with the error's code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except EigenpoolError as exc:
            logger.error(exc.detail)
            _finish(CommandResult(success=False, error=exc.detail), exc.exit_code)
        except ValidationError as exc:
            detail = "; ".join(f"{'.'.join(map(str, e['loc'])) or 'input'}: {e['msg']}" for e in exc.errors())
            logger.error(detail)
            _finish(CommandResult(success=False, error=detail), EXIT_INPUT)
        except FileNotFoundError as exc:
            _finish(CommandResult(success=False, error=str(exc)), EXIT_INPUT)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.error(f"Numerical failure: {exc}")
            _finish(CommandResult(success=False, error=f"numerical failure: {exc}"), EXIT_NUMERICAL)

    return wrapper


def run_options(command):
    """Flags shared by `fit` and `fit-copula`; unset flags fall back to --config."""
    options = [
        click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Data file."),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="key=value run config."),
        click.option("--iterations", type=int),
        click.option("--burn-in", type=int),
        click.option("--thin", type=int),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Generated and reported when absent."),
        click.option("--variant", type=click.Choice(["hier", "nopool", "shared1", "common"])),
        click.option("--chains", type=int),
        click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False)),
        click.option("--mh-correction", type=click.Choice(["off", "1", "2"])),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _load_config(config_path, **overrides) -> RunConfig:
    return RunConfig.load(config_path, **overrides)


def _fit_result(outcome: dict) -> CommandResult:
    return CommandResult(
        success=True,
        message=f"Saved {outcome['samples']} samples (seed {outcome['seed']})",
        data=outcome,
    )


@click.command("fit")
@run_options
@click.option("--format", "fmt", default="ssq", show_default=True, type=click.Choice(["raw", "ssq"]))
@handle_errors
def fit_command(data_path, config_path, out_dir, fmt, **overrides):
    """Fit the Gaussian hierarchical model to grouped data."""
    config = _load_config(config_path, **overrides)
    _finish(_fit_result(services.fit(data_path, fmt, config, out_dir)))


@click.command("fit-copula")
@run_options
@click.option("--format", "fmt", default="raw", show_default=True, type=click.Choice(["raw", "ssq"]))
@handle_errors
def fit_copula_command(data_path, config_path, out_dir, fmt, **overrides):
    """Fit the copula model to grouped ordinal observations."""
    config = _load_config(config_path, **overrides)
    _finish(_fit_result(services.fit(data_path, fmt, config, out_dir, copula=True)))


@click.command("simulate")
@click.option("--groups", "k", default=4, show_default=True, type=int)
@click.option("--dim", "p", default=4, show_default=True, type=int)
@click.option("--n", default=50, show_default=True, type=int, help="Observations per group.")
@click.option("--w", default=500.0, show_default=True, type=float, help="Concentration; 0 for uniform frames.")
@click.option("--eigenvalues", help="Comma-separated eigenvalue profile, largest first.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1))
@click.option("--format", "fmt", default="ssq", show_default=True, type=click.Choice(["raw", "ssq"]))
@click.option("--levels", type=int, help="Discretize raw observations into this many ordered levels.")
@click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False))
@handle_errors
def simulate_command(k, p, n, w, eigenvalues, seed, fmt, levels, out_dir):
    """Simulate grouped data with a known truth file."""
    profile = None
    if eigenvalues:
        try:
            profile = [float(x) for x in eigenvalues.split(",")]
        except ValueError as exc:
            raise click.BadParameter("expected comma-separated numbers", param_hint="--eigenvalues") from exc
    outcome = services.simulate(k, p, n, w, profile, seed, out_dir, fmt, levels)
    _finish(CommandResult(success=True, message=f"Simulated {k} groups (seed {outcome['seed']})", data=outcome))


@click.command("summarize")
@click.argument("sample_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", default=services.SUMMARY_FILE, show_default=True, type=click.Path(dir_okay=False))
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), help="truth.json from `simulate`.")
@click.option("--monitored", default="w,mean_log_ab,lambda1", show_default=True)
@handle_errors
def summarize_command(sample_files, out_path, truth_path, monitored):
    """Summarize one or more sample files."""
    names = [name.strip() for name in monitored.split(",") if name.strip()]
    report = services.summarize(sample_files, out_path, names, truth_path)
    _finish(
        CommandResult(
            success=True,
            message=f"Summarized {len(sample_files)} file(s)",
            data={"summary": str(Path(out_path)), "sections": report.names()},
        )
    )
