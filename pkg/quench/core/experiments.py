"""
Experiment runners behind the command-line surface.

Each runner takes a validated ``ExperimentConfig`` and an ``OutputWriter``,
writes its CSV/JSON artifacts and returns the results that go into the run
summary. ``execute`` wraps a runner with the config snapshot, the summary
file and the run manifest.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np

from quench import __version__
from quench.core.audit import run_audit, theorem_case_check
from quench.core.config import ExperimentConfig
from quench.core.driving import Realisation
from quench.core.law import (
    LawConfigError,
    hitting_law,
    kac_check,
    ks_to_exponential,
    product_law_curve,
    return_law,
)
from quench.core.manifest import OutputWriter, RunManifest, build_manifest, timed
from quench.core.maps import MapSystem
from quench.core.measures import Ball, ball_measure, sample_centers
from quench.core.report import dumps_report, summary_json
from quench.core.short_returns import (
    fit_short_return_decay,
    short_return_profile,
    very_short_set_measure,
)
from quench.core.transfer import (
    DensityGrid,
    doeblin_fortet_probe,
    invariance_residual,
    marginal_density,
    quenched_density,
)
from quench.utils.counter import derive_seed

logger = logging.getLogger(__name__)

LAW_MODES = ("hitting", "return")
STREAM_LAW_RUNS = 0x4C415752

# Product-law comparison window on the t axis
PRODUCT_T_MAX = 3.0

PROBE_DEPTH = 8
PROBE_TRIALS = 32

T = TypeVar("T")
R = TypeVar("R")

Runner = Callable[[ExperimentConfig, OutputWriter, Dict[str, float]], Dict[str, Any]]


@dataclass
class RunResult:
    """Outcome of one command: output directory, summary results and manifest."""

    command: str
    out_dir: Path
    results: Dict[str, Any]
    manifest: RunManifest


def _map(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    """Map in order on a thread pool; results do not depend on the worker count."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _setup(config: ExperimentConfig):
    system = config.system.build()
    omega = Realisation(config.driving.build())
    return system, omega


def execute(command: str, config: ExperimentConfig, runner: Runner) -> RunResult:
    """
    Run one command inside a rolled-back-on-failure output directory.

    Writes ``<command>.config.yaml`` (the result-determining settings, without
    output directory or worker counts), the runner's files, the volatile
    ``<command>_summary.json`` and ``<command>.manifest.json``.

    Raises:
        OutputError: If the output directory cannot be written
    """
    out_dir = Path(config.output_dir)
    timings: Dict[str, float] = {}
    logger.debug(f"Running '{command}' with seed {config.seed} into {out_dir}")
    with OutputWriter(out_dir) as writer:
        writer.write_text(f"{command}.config.yaml", config.dumps_snapshot())
        with timed(timings, "total"):
            results = runner(config, writer, timings)
        summary = {"command": command, "seed": config.seed, "results": results, "timings": timings}
        writer.write_json(f"{command}_summary.json", summary, volatile=True)
        manifest = build_manifest(command, config.to_dict(), __version__, config.seed, writer, timings)
        manifest.save(out_dir)
    return RunResult(command, out_dir, results, manifest)


def _fiber_record(system: MapSystem, omega: Realisation, j: int, density: DensityGrid, n_pull: int) -> Dict[str, Any]:
    return {
        "fiber": j,
        "convergence": density.convergence,
        "invariance_residual": invariance_residual(system, omega.shift(j), density.bins, n_pull),
        "max_uniform_deviation": float(np.max(np.abs(density.values - 1.0))),
        "first_bin": float(density.values[0]),
        "last_bin": float(density.values[-1]),
    }


def run_density(config: ExperimentConfig, writer: OutputWriter, timings: Dict[str, float]) -> Dict[str, Any]:
    """Quenched densities on the configured fibers, the marginal density and convergence indicators."""
    system, omega = _setup(config)
    grid = config.grid
    fibers = list(grid.fibers)
    with timed(timings, "quenched"):
        densities = _map(lambda j: quenched_density(system, omega.shift(j), grid.n_pull, grid.bins),
                         fibers, config.threads)
        records = [_fiber_record(system, omega, j, f, grid.n_pull) for j, f in zip(fibers, densities)]
    with timed(timings, "marginal"):
        marginal = marginal_density(system, config.driving.build(), grid.n_omega, grid.n_pull, grid.bins,
                                    threads=config.threads)
    with timed(timings, "probe"):
        probe = doeblin_fortet_probe(system, omega, PROBE_DEPTH, PROBE_TRIALS, grid.bins, seed=config.seed)

    centers = DensityGrid.uniform(grid.bins).centers
    writer.write_csv(
        "density_fibers.csv",
        ["x"] + [f"fiber_{j}" for j in fibers],
        zip(centers, *[f.values for f in densities]),
    )
    writer.write_csv("density_marginal.csv", ["x", "density"], zip(centers, marginal.values))
    columns = ["fiber", "convergence", "invariance_residual", "max_uniform_deviation", "first_bin", "last_bin"]
    writer.write_csv("density_convergence.csv", columns, ([r[c] for c in columns] for r in records))

    marginal_record = {
        "convergence": marginal.convergence,
        "max_uniform_deviation": float(np.max(np.abs(marginal.values - 1.0))),
        "first_bin": float(marginal.values[0]),
        "last_bin": float(marginal.values[-1]),
    }
    return {"fibers": records, "marginal": marginal_record, "doeblin_fortet": probe.to_dict()}


def law_centers(config: ExperimentConfig, f_omega: DensityGrid) -> np.ndarray:
    law = config.law
    if law.center_policy == "fixed":
        return np.asarray(law.centers, dtype=float)
    return sample_centers(f_omega, law.n_centers, margin=law.margin, seed=config.seed)


def run_law(config: ExperimentConfig, writer: OutputWriter, timings: Dict[str, float],
            mode: str = "hitting") -> Dict[str, Any]:
    """
    Empirical hitting or return laws for every radius and center.

    Raises:
        LawConfigError: If mode is not 'hitting' or 'return'
    """
    if mode not in LAW_MODES:
        raise LawConfigError(f"Law mode must be one of {LAW_MODES}, got {mode!r}")
    system, omega = _setup(config)
    grid = config.grid
    base = config.law.law_config(config.seed, config.threads)
    estimate = hitting_law if mode == "hitting" else return_law

    with timed(timings, "densities"):
        f_omega = quenched_density(system, omega, grid.n_pull, grid.bins)
        marginal = marginal_density(system, config.driving.build(), grid.n_omega, grid.n_pull, grid.bins,
                                    threads=config.threads)
    centers = law_centers(config, f_omega)

    per_rho, table = [], []
    with timed(timings, "laws"):
        for ri, rho in enumerate(config.law.rhos):
            records = []
            for ci, x in enumerate(centers):
                ball = Ball(float(x), rho)
                mu_ball = ball_measure(marginal, ball)
                cfg = replace(base, seed=derive_seed(config.seed, STREAM_LAW_RUNS, ri, ci))
                law = estimate(system, omega, ball, mu_ball, f_omega, cfg)
                product = product_law_curve(system, omega, ball, f_omega, law.horizons)
                kac = kac_check(system, omega, ball, mu_ball, f_omega, cfg)
                window = law.t_grid <= PRODUCT_T_MAX
                record = {
                    "rho": rho,
                    "center_index": ci,
                    "center": float(x),
                    "mu_ball": mu_ball,
                    "quenched_mu_ball": ball_measure(f_omega, ball),
                    "ks": ks_to_exponential(law),
                    "product_gap": float(np.max(np.abs(law.survival - product)[window])) if window.any() else 0.0,
                    "kac_ratio": kac.ratio,
                    "kac_lower_bound": kac.lower_bound,
                    "censored": law.censored,
                }
                records.append(record)
                writer.write_csv(
                    f"law_{mode}_rho{ri}_c{ci}.csv",
                    ["t", "F_hat", "e_minus_t", "n_eff", "censored", "product_law"],
                    zip(law.t_grid, law.survival, law.exponential, law.n_eff,
                        np.full(law.t_grid.size, law.censored), product),
                )
                logger.debug(f"rho={rho} center={float(x):.6f}: KS={record['ks']:.4f}, Kac={kac.ratio:.4f}")
            table.extend(records)
            per_rho.append({"rho": rho, "worst_ks": max(r["ks"] for r in records), "centers": records})

    columns = ["rho", "center_index", "center", "mu_ball", "quenched_mu_ball", "ks", "product_gap",
               "kac_ratio", "kac_lower_bound", "censored"]
    writer.write_csv(f"law_{mode}_table.csv", columns, ([r[c] for c in columns] for r in table))
    return {"mode": mode, "per_rho": per_rho}


def run_short_returns(config: ExperimentConfig, writer: OutputWriter, timings: Dict[str, float]) -> Dict[str, Any]:
    """Short-return set measure over the radius grid, per-level profiles and the decay fit."""
    system, omega = _setup(config)
    spec = config.short_returns
    cfg = spec.build(config.seed)
    with timed(timings, "density"):
        f_hat = quenched_density(system, omega, config.grid.n_pull, config.grid.bins)

    measure_rows, profile_rows, estimates = [], [], []
    with timed(timings, "sets"):
        for rho in cfg.rhos:
            horizon = cfg.horizon(system, rho)
            est = very_short_set_measure(system, omega, rho, cfg, f_hat)
            estimates.append(est.estimate)
            measure_rows.append([rho, horizon, est.estimate, est.std_error, est.n_centers])
            profile = short_return_profile(system, omega, rho, spec.n_max, f_hat, cfg.n_centers, cfg.seed)
            for n, level in enumerate(profile, start=1):
                part = 1 if n < cfg.b * horizon else 2
                profile_rows.append([rho, n, part, level.estimate, level.std_error, level.n_centers])

    writer.write_csv("short_returns_measure.csv", ["rho", "J", "estimate", "std_error", "n_centers"], measure_rows)
    writer.write_csv("short_returns_profile.csv", ["rho", "n", "part", "estimate", "std_error", "n_centers"],
                     profile_rows)
    fit = fit_short_return_decay(cfg.rhos, estimates)
    fit_dict: Optional[Dict[str, Any]] = fit.to_dict() if fit is not None else None
    writer.write_json("short_returns_fit.json", {"fit": fit_dict, "a": cfg.scale(system), "b": cfg.b})
    nonincreasing = all(b <= a for a, b in zip(estimates, estimates[1:]))
    return {
        "rhos": list(cfg.rhos),
        "estimates": estimates,
        "nonincreasing": nonincreasing,
        "a": cfg.scale(system),
        "fit": fit_dict,
    }


def run_audit_command(config: ExperimentConfig, writer: OutputWriter, timings: Dict[str, float]) -> Dict[str, Any]:
    """Assumption audit, case check, report document and machine-readable statuses."""
    system = config.system.build()
    budgets = replace(config.audit, seed=config.seed, threads=config.threads)
    with timed(timings, "audit"):
        report = run_audit(system, config.driving.build(), budgets, system_info=config.system.info())
    verdict = theorem_case_check(report)
    ledger = verdict.to_dict()
    writer.write_text("audit_report.md", dumps_report(report, ledger))
    writer.write_text("audit_statuses.json", summary_json(report, ledger) + "\n")
    return {
        "verdict": verdict.verdict,
        "satisfied": list(verdict.satisfied),
        "all_pass": report.all_pass,
        "statuses": {entry.id: entry.status.value for entry in report.entries},
    }
