import click

from eigenpool.cli.commands import fit_command, fit_copula_command, simulate_command, summarize_command
from eigenpool.config import settings
from eigenpool.core.logging import setup_logging


@click.group()
@click.option("--log-level", default=None, help=f"Overrides EIGENPOOL_LOG_LEVEL (default {settings.LOG_LEVEL}).")
@click.option("--log-file", default=None, type=click.Path(dir_okay=False))
def cli(log_level, log_file):
    """Pooled estimation of covariance eigenstructure across groups."""
    setup_logging(log_level, log_file)


cli.add_command(fit_command)
cli.add_command(fit_copula_command)
cli.add_command(simulate_command)
cli.add_command(summarize_command)
