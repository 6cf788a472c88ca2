"""
Density command: quenched densities along a driving sequence and the marginal density.
"""
from pathlib import Path
from typing import Optional

import typer

from quench.cli.app import app
from quench.cli.utils import handles_errors, load_config, print_info, print_run_footer, print_table
from quench.core.experiments import execute, run_density


@app.command(name="density")
@handles_errors
def density_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the driving seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Worker threads"),
    pm_paper_coefficient: bool = typer.Option(
        False, "--pm-paper-coefficient", help="Use the alternative coefficient in the intermittent left branch"
    ),
):
    """
    Estimate quenched densities on the configured fibers and the marginal density.

    Writes density_fibers.csv, density_marginal.csv and density_convergence.csv.
    """
    experiment = load_config(config, seed, out, threads, pm_paper_coefficient)
    print_info(f"Computing densities with {experiment.grid.bins} bins, pullback depth {experiment.grid.n_pull}...")
    result = execute("density", experiment, run_density)

    rows = [
        (r["fiber"], r["convergence"], r["invariance_residual"], r["first_bin"], r["last_bin"])
        for r in result.results["fibers"]
    ]
    marginal = result.results["marginal"]
    rows.append(("marginal", marginal["convergence"], "", marginal["first_bin"], marginal["last_bin"]))
    print_table("Densities", ["Fiber", "Convergence", "Invariance residual", "First bin", "Last bin"], rows)
    print_run_footer(result.out_dir, result.manifest.files)
