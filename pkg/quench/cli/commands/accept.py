"""
Accept command: run the acceptance suite and report a criterion table.
"""
from pathlib import Path
from typing import List, Optional

import typer

from quench.cli.app import app
from quench.cli.utils import (
    EXIT_FAILURE,
    console,
    handles_errors,
    load_config,
    print_error,
    print_info,
    print_success,
    print_table,
)
from quench.core.acceptance import AcceptanceSuite


@app.command(name="accept")
@handles_errors
def accept_command(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Configuration supplying seed and threads"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Scratch directory for the determinism runs"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Worker threads"),
    criterion: Optional[List[int]] = typer.Option(None, "--criterion", help="Run only these criteria (repeatable)"),
):
    """
    Run the acceptance criteria; exit 0 only if every one passes.
    """
    run_seed, run_threads = seed or 0, threads or 1
    if config is not None:
        experiment = load_config(config, seed, None, threads)
        run_seed, run_threads = experiment.seed, experiment.threads
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    suite = AcceptanceSuite(seed=run_seed, threads=run_threads, work_dir=out)
    print_info("Running acceptance criteria...")
    results = suite.run(criterion or None)

    print_table(
        "Acceptance",
        ["#", "Criterion", "Target", "Observed", "Status"],
        ((r.number, r.name, r.target, r.observed, "pass" if r.passed else "FAIL") for r in results),
    )
    failures = [r for r in results if not r.passed]
    if failures:
        print_error(f"{len(failures)} of {len(results)} criteria failed:")
        for r in failures:
            console.print(f"  - {r.number}. {r.name}: observed {r.observed}, target {r.target}")
        raise typer.Exit(code=EXIT_FAILURE)
    print_success(f"All {len(results)} criteria passed")
