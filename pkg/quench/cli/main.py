"""
Main CLI entry point for quench.
"""
from quench.cli.app import get_app


def main():
    """Main entry point for the CLI."""
    get_app()()


if __name__ == "__main__":
    main()
