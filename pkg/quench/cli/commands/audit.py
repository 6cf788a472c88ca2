"""
Audit command: empirical check of the standing assumptions and the case arithmetic.
"""
from pathlib import Path
from typing import Optional

import typer

from quench.cli.app import app
from quench.cli.utils import (
    handles_errors,
    load_config,
    print_info,
    print_run_footer,
    print_table,
    print_warning,
)
from quench.core.experiments import execute, run_audit_command


@app.command(name="audit")
@handles_errors
def audit_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the driving seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Worker threads"),
    pm_paper_coefficient: bool = typer.Option(
        False, "--pm-paper-coefficient", help="Use the alternative coefficient in the intermittent left branch"
    ),
):
    """
    Audit assumptions I-IX and evaluate the theorem's cases A, B and C.

    Writes audit_report.md (front matter carries every fitted number) and
    audit_statuses.json.
    """
    experiment = load_config(config, seed, out, threads, pm_paper_coefficient)
    print_info(f"Auditing over {experiment.audit.n_omega} realisations...")
    result = execute("audit", experiment, run_audit_command)

    results = result.results
    print_table("Assumptions", ["Assumption", "Status"], results["statuses"].items())
    if results["verdict"] == "none":
        print_warning("No case of the theorem is satisfied by the fitted exponents")
    else:
        print_info(f"Case verdict: [bold]{results['verdict']}[/bold] (satisfied: {', '.join(results['satisfied'])})")
    print_run_footer(result.out_dir, result.manifest.files)
