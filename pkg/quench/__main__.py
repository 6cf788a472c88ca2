"""
Entry point for running the Quench CLI directly.

This allows the CLI to be run with 'python -m quench'
"""
from quench.cli.main import main

if __name__ == "__main__":
    main()
