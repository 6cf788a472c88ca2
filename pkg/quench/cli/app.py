"""
Main Typer application for the quench CLI.
"""
import typer

from quench import __version__
from quench.cli.utils import console, setup_logging

# Create the main Typer app instance
app = typer.Typer(
    name="quench",
    help="Quenched hitting and return time laws for random interval maps",
    add_completion=False,
)


@app.callback()
def callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logging"),
):
    """
    quench - exponential hitting and return time laws for randomly driven interval maps.

    Every command reads an experiment configuration and writes CSV/JSON
    artifacts plus a run manifest.
    """
    setup_logging(verbose)


@app.command()
def version():
    """Show the version of quench."""
    console.print(f"quench version: [bold]{__version__}[/bold]")


def get_app() -> typer.Typer:
    """
    Get the configured Typer app instance.

    This is used as the main entry point for the CLI and for testing.
    """
    # Import the command modules to register commands
    import quench.cli.commands.accept  # noqa: F401
    import quench.cli.commands.audit  # noqa: F401
    import quench.cli.commands.density  # noqa: F401
    import quench.cli.commands.law  # noqa: F401
    import quench.cli.commands.short_returns  # noqa: F401

    return app
