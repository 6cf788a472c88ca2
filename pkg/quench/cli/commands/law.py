"""
Law command: empirical hitting or return time laws against exp(-t).
"""
from pathlib import Path
from typing import Optional

import typer

from quench.cli.app import app
from quench.cli.utils import handles_errors, load_config, print_info, print_run_footer, print_table
from quench.core.experiments import LAW_MODES, execute, run_law
from quench.core.law import LawConfigError


@app.command(name="law")
@handles_errors
def law_command(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment configuration (YAML)"),
    mode: str = typer.Option("hitting", "--mode", "-m", help="hitting or return"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the driving seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="Worker threads"),
    pm_paper_coefficient: bool = typer.Option(
        False, "--pm-paper-coefficient", help="Use the alternative coefficient in the intermittent left branch"
    ),
):
    """
    Estimate the rescaled hitting or return time law for every radius and center.

    Writes one CSV per (radius, center) with columns t, F_hat, e_minus_t,
    n_eff, censored, product_law, plus a per-run table.
    """
    if mode not in LAW_MODES:
        raise LawConfigError(f"--mode must be one of {', '.join(LAW_MODES)}, got '{mode}'")
    experiment = load_config(config, seed, out, threads, pm_paper_coefficient)
    print_info(f"Sampling {experiment.law.n_samples} {mode} orbits per center...")
    result = execute("law", experiment, lambda cfg, writer, timings: run_law(cfg, writer, timings, mode=mode))

    rows = []
    for block in result.results["per_rho"]:
        for r in block["centers"]:
            rows.append((r["rho"], r["center"], r["ks"], r["product_gap"], r["kac_ratio"], r["censored"]))
    print_table(f"{mode.capitalize()} laws", ["rho", "Center", "KS", "Product gap", "Kac ratio", "Censored"], rows)
    for block in result.results["per_rho"]:
        print_info(f"rho={block['rho']:.4g}: worst KS {block['worst_ks']:.4f}")
    print_run_footer(result.out_dir, result.manifest.files)
