"""
Tests for the experiment runners and their output files.
"""
import csv
import json
import tempfile
from pathlib import Path

import pytest

from quench.core.config import ExperimentConfig
from quench.core.experiments import (
    execute,
    law_centers,
    run_audit_command,
    run_density,
    run_law,
    run_short_returns,
)
from quench.core.law import LawConfigError
from quench.core.manifest import RunManifest
from quench.core.report import read_report
from quench.core.transfer import DensityGrid

SMALL_AUDIT = {
    "n_omega": 2,
    "bins": 256,
    "n_pull": 10,
    "lags": [1, 2, 4, 8],
    "rhos": [0.1, 0.01, 0.001],
    "n_centers": 3,
    "diameter_depth": 6,
    "diameter_fit": [2, 6],
    "diameter_omega": 1,
    "distortion_depth": 4,
    "distortion_omega": 1,
    "annulus_rhos": [0.01, 0.001],
    "k_ratio_rho": 0.01,
}


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield Path(tmpdirname)


def small_config(out_dir: Path, family: str = "expanding", **overrides) -> ExperimentConfig:
    data = {
        "system": {"family": family},
        "driving": {"seed": 11},
        "grid": {"bins": 256, "n_pull": 10, "fibers": [0, 1], "n_omega": 2},
        "law": {"rhos": [2.0 ** -6], "t_count": 10, "n_samples": 200, "n_centers": 2, "block_size": 64},
        "short_returns": {"a": 0.5, "rhos": [0.01, 0.001], "n_centers": 100, "n_max": 3},
        "audit": SMALL_AUDIT,
        "output_dir": str(out_dir),
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def read_rows(path: Path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def assert_same_outputs(first, second):
    names = sorted(first.manifest.reproducible_files)
    assert names == sorted(second.manifest.reproducible_files)
    assert any(name.endswith(".config.yaml") for name in names)
    for name in names:
        assert (first.out_dir / name).read_bytes() == (second.out_dir / name).read_bytes(), name
    assert first.manifest.verify(second.manifest) == []


class TestExecute:
    """Test suite for the execute wrapper."""

    def test_writes_snapshot_summary_and_manifest(self, temp_dir):
        """Test the files every command writes."""
        config = small_config(temp_dir / "run")
        result = execute("density", config, run_density)
        out = temp_dir / "run"
        assert (out / "density.config.yaml").exists()
        assert (out / "density_summary.json").exists()
        manifest = RunManifest.load(out / "density.manifest.json")
        assert manifest.seed == 11
        assert manifest.volatile == ["density_summary.json"]
        assert manifest.verify_directory(out) == []
        assert ExperimentConfig.load(out / "density.config.yaml").snapshot() == config.snapshot()
        summary = json.loads((out / "density_summary.json").read_text())
        assert summary["command"] == "density"
        assert "total" in summary["timings"]
        assert set(result.results) == set(summary["results"])

    def test_rolls_back_failed_runs(self, temp_dir):
        """Test that a failing runner leaves no output directory behind."""
        def failing(config, writer, timings):
            writer.write_text("partial.csv", "x\n")
            raise RuntimeError("runner failed")

        with pytest.raises(RuntimeError):
            execute("density", small_config(temp_dir / "run"), failing)
        assert not (temp_dir / "run").exists()


class TestDensityRun:
    """Test suite for the density command runner."""

    def test_files(self, temp_dir):
        """Test CSV layout and convergence records."""
        result = execute("density", small_config(temp_dir, family="pm"), run_density)
        fibers = read_rows(temp_dir / "density_fibers.csv")
        assert fibers[0] == ["x", "fiber_0", "fiber_1"]
        assert len(fibers) == 257
        marginal = read_rows(temp_dir / "density_marginal.csv")
        assert marginal[0] == ["x", "density"]
        convergence = read_rows(temp_dir / "density_convergence.csv")
        assert convergence[0][0] == "fiber"
        assert [row[0] for row in convergence[1:]] == ["0", "1"]
        assert float(fibers[1][1]) > float(fibers[-1][1])
        assert set(result.results["doeblin_fortet"]) >= {"eta", "constant"}


class TestLawRun:
    """Test suite for the law command runner."""

    def test_hitting_files(self, temp_dir):
        """Test per-center CSVs and the run table."""
        result = execute("law", small_config(temp_dir), run_law)
        rows = read_rows(temp_dir / "law_hitting_rho0_c0.csv")
        assert rows[0] == ["t", "F_hat", "e_minus_t", "n_eff", "censored", "product_law"]
        assert len(rows) == 11
        assert (temp_dir / "law_hitting_rho0_c1.csv").exists()
        table = read_rows(temp_dir / "law_hitting_table.csv")
        assert len(table) == 3
        block = result.results["per_rho"][0]
        assert block["worst_ks"] == max(c["ks"] for c in block["centers"])

    def test_return_mode(self, temp_dir):
        """Test the return-law variant."""
        result = execute("law", small_config(temp_dir),
                         lambda cfg, writer, timings: run_law(cfg, writer, timings, mode="return"))
        assert result.results["mode"] == "return"
        assert (temp_dir / "law_return_table.csv").exists()

    def test_invalid_mode(self, temp_dir):
        """Test that unknown modes raise before any sampling."""
        with pytest.raises(LawConfigError):
            execute("law", small_config(temp_dir / "run"),
                    lambda cfg, writer, timings: run_law(cfg, writer, timings, mode="sojourn"))
        assert not (temp_dir / "run").exists()

    def test_fixed_centers(self, temp_dir):
        """Test the fixed center policy."""
        config = small_config(temp_dir, law={"rhos": [0.01], "center_policy": "fixed", "centers": [0.2, 0.7]})
        centers = law_centers(config, DensityGrid.uniform(16))
        assert list(centers) == [0.2, 0.7]

    def test_byte_identical_across_threads(self, temp_dir):
        """Test that equal seeds give identical files whatever the thread count."""
        single = execute("law", small_config(temp_dir / "one"), run_law)
        pooled = execute("law", small_config(temp_dir / "three", threads=3), run_law)
        assert_same_outputs(single, pooled)

    def test_manifests_agree_for_equal_runs(self, temp_dir):
        """Test that two identical runs have matching reproducible checksums."""
        first = execute("law", small_config(temp_dir / "a"), run_law)
        second = execute("law", small_config(temp_dir / "b"), run_law)
        assert first.manifest.verify(second.manifest) == []
        assert first.manifest.files["law_hitting_table.csv"] == second.manifest.files["law_hitting_table.csv"]


class TestShortReturnsRun:
    """Test suite for the short-returns command runner."""

    def test_files(self, temp_dir):
        """Test measure, profile and fit outputs."""
        result = execute("short_returns", small_config(temp_dir), run_short_returns)
        measure = read_rows(temp_dir / "short_returns_measure.csv")
        assert measure[0] == ["rho", "J", "estimate", "std_error", "n_centers"]
        assert [row[1] for row in measure[1:]] == ["2", "3"]
        profile = read_rows(temp_dir / "short_returns_profile.csv")
        assert len(profile) == 1 + 2 * 3
        fit = json.loads((temp_dir / "short_returns_fit.json").read_text())
        assert fit["a"] == 0.5
        assert isinstance(result.results["nonincreasing"], bool)


class TestAuditRun:
    """Test suite for the audit command runner."""

    def test_files(self, temp_dir):
        """Test the report document and the status summary."""
        result = execute("audit", small_config(temp_dir), run_audit_command)
        report = read_report(temp_dir / "audit_report.md")
        assert report.system["family"] == "expanding"
        statuses = json.loads((temp_dir / "audit_statuses.json").read_text())
        assert set(statuses["statuses"]) == {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX"}
        assert statuses["case_check"]["verdict"] == result.results["verdict"]

    def test_byte_identical_across_threads(self, temp_dir):
        """Test that the report and statuses do not depend on the worker count."""
        single = execute("audit", small_config(temp_dir / "one"), run_audit_command)
        pooled = execute("audit", small_config(temp_dir / "three", threads=3), run_audit_command)
        assert_same_outputs(single, pooled)
        assert "threads" not in read_report(temp_dir / "three" / "audit_report.md").budgets


class TestDensityThreads:
    """Test suite for density runs on several workers."""

    def test_byte_identical_across_threads(self, temp_dir):
        """Test that densities do not depend on the worker count."""
        single = execute("density", small_config(temp_dir / "one"), run_density)
        pooled = execute("density", small_config(temp_dir / "three", threads=3), run_density)
        assert_same_outputs(single, pooled)
