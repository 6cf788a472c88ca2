"""
Utility functions for quench CLI commands.
"""
import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional, Sequence, TypeVar, cast

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from quench.core.audit import AuditError
from quench.core.config import ConfigValidationError, ExperimentConfig
from quench.core.driving import DrivingConfigError
from quench.core.law import LawConfigError
from quench.core.maps import CylinderCapError
from quench.core.short_returns import ShortReturnConfigError

# Set up console with nice styling
console = Console()

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3

CONFIG_ERRORS = (ConfigValidationError, DrivingConfigError, LawConfigError, ShortReturnConfigError)


def print_error(message: str) -> None:
    """Print an error message with consistent styling."""
    console.print(f"❌ [bold red]Error:[/bold red] {message}")


def print_warning(message: str) -> None:
    """Print a warning message with consistent styling."""
    console.print(f"⚠️  [bold yellow]Warning:[/bold yellow] {message}")


def print_success(message: str) -> None:
    """Print a success message with consistent styling."""
    console.print(f"✅ [bold green]{message}[/bold green]")


def print_info(message: str) -> None:
    """Print an informational message with consistent styling."""
    console.print(f"ℹ️  {message}")


def format_path(path: Path) -> str:
    """Format a path for display, using ~ for home directory if applicable."""
    try:
        relative_to_home = Path(path).resolve().relative_to(Path.home())
        return f"~/{relative_to_home}"
    except ValueError:
        return str(path)


def setup_logging(verbose: bool) -> None:
    """Route library logging through rich; DEBUG with --verbose, WARNING otherwise."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def exit_code_for(error: Exception) -> int:
    """Exit code of an exception: 2 for configuration errors, 3 for resource caps, 1 otherwise."""
    if isinstance(error, CylinderCapError):
        return EXIT_RESOURCE
    if isinstance(error, AuditError) and isinstance(error.__cause__, CylinderCapError):
        return EXIT_RESOURCE
    if isinstance(error, CONFIG_ERRORS):
        return EXIT_CONFIG
    return EXIT_FAILURE


def handles_errors(f: F) -> F:
    """
    Decorator mapping exceptions raised by a command to messages and exit codes.

    For example:

    @app.command()
    @handles_errors
    def my_command(config: Path):
        # Command implementation
    """
    @functools.wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except typer.Exit:
            raise
        except Exception as e:
            code = exit_code_for(e)
            print_error(str(e))
            if code == EXIT_CONFIG:
                print_info("Check the configuration file; docs/configuration.md lists every key.")
            elif code == EXIT_RESOURCE:
                print_info("Lower the depth budget or raise the cell cap.")
            logger.debug("Command failed", exc_info=True)
            raise typer.Exit(code=code)
    return cast(F, wrapper)


def load_config(config_path: Path, seed: Optional[int] = None, out: Optional[Path] = None,
                threads: Optional[int] = None, pm_paper_coefficient: bool = False) -> ExperimentConfig:
    """
    Load a configuration file and apply command-line overrides.

    A missing file is a configuration error.

    Raises:
        ConfigValidationError: If the file is missing, unreadable or invalid
    """
    try:
        config = ExperimentConfig.load(config_path)
    except FileNotFoundError as e:
        raise ConfigValidationError(str(e))
    try:
        return config.with_overrides(seed=seed, out=out, threads=threads, paper_coefficient=pm_paper_coefficient)
    except ValueError as e:
        raise ConfigValidationError(str(e))


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def print_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Print a results table."""
    table = Table(title=title, header_style="bold")
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*[_cell(v) for v in row])
    console.print(table)


def print_run_footer(out_dir: Path, files: Dict[str, str]) -> None:
    print_success(f"Wrote {len(files)} files to [bold]{format_path(out_dir)}[/bold]")
