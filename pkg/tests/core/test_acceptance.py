"""
Tests for the acceptance suite and its brute-force oracles.
"""
import tempfile
from pathlib import Path

import pytest

from quench.core.acceptance import (
    AcceptanceSuite,
    CriterionResult,
    brute_force_hitting_time,
    grid_oracle_disagrees,
)
from quench.core.driving import DrivingConfig, Realisation
from quench.core.law import Censored, hitting_time
from quench.core.maps import MapSystem
from quench.core.measures import Ball


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield Path(tmpdirname)


@pytest.fixture
def doubling():
    return MapSystem.expanding([2]), Realisation(DrivingConfig((1.0,), 0))


class TestOracles:
    """Test suite for the brute-force oracles."""

    def test_grid_oracle_agrees_with_true_verdicts(self, doubling):
        """Test that the grid scan accepts correct verdicts around the period-two orbit of 1/3."""
        system, omega = doubling
        # the second image of B(1/3, 0.01) covers the ball, the first misses it
        assert not grid_oracle_disagrees(system, omega, 1 / 3, 0.01, 3, exact=True)
        assert not grid_oracle_disagrees(system, omega, 1 / 3, 0.01, 2, exact=False)

    def test_grid_oracle_flags_wrong_verdicts(self, doubling):
        """Test that the grid scan rejects inverted verdicts."""
        system, omega = doubling
        assert grid_oracle_disagrees(system, omega, 1 / 3, 0.01, 3, exact=False)
        assert grid_oracle_disagrees(system, omega, 1 / 3, 0.01, 2, exact=True)

    def test_brute_force_hitting_time(self, doubling):
        """Test the symbol-by-symbol scan on the orbit of 1/3."""
        system, omega = doubling
        assert brute_force_hitting_time(system, omega, 1 / 3, Ball(2 / 3, 0.01), 20) == 1
        assert brute_force_hitting_time(system, omega, 1 / 3, Ball(1 / 3, 0.01), 20) == 2
        assert brute_force_hitting_time(system, omega, 1 / 3, Ball(0.9, 0.01), 20) is None

    def test_brute_force_matches_hitting_time(self):
        """Test both scans on a random two-map system."""
        system = MapSystem.expanding([2, 3])
        omega = Realisation(DrivingConfig((0.5, 0.5), 5))
        ball = Ball(0.4, 0.05)
        for x in (0.05, 0.2, 0.61, 0.77, 0.93):
            fast = hitting_time(system, omega, x, ball, 100)
            slow = brute_force_hitting_time(system, omega, x, ball, 100)
            if slow is None:
                assert isinstance(fast, Censored)
            else:
                assert fast == slow


class TestAcceptanceSuite:
    """Test suite for the fast acceptance criteria."""

    def test_exactness_suite_passes(self):
        """Test that every exact identity holds."""
        result = AcceptanceSuite(seed=0).criterion_6()
        assert isinstance(result, CriterionResult)
        assert result.number == 6
        assert result.passed, result.observed

    def test_exactness_errors_are_named(self):
        """Test the identities reported by the exactness suite."""
        errors = AcceptanceSuite(seed=1).exactness_errors()
        assert set(errors) == {"ulam_columns", "uniform_mass", "uniform_fixed",
                               "inverse_round_trip", "doubling_diameters", "affine_distortion", "product_law"}
        assert errors["uniform_mass"] <= 1e-12
        assert errors["uniform_fixed"] <= 1e-12

    def test_oracle_pairs_agree(self):
        """Test the fast and brute-force hitting times on a small pair sample."""
        disagreements, z_scores = AcceptanceSuite(seed=2).oracle_checks(pairs=50)
        assert disagreements == 0
        assert set(z_scores) == {0.5, 1.0, 2.0}

    def test_short_return_oracle_agrees(self):
        """Test the exact short-return verdicts against the grid scan on a few triples."""
        estimates, disagreements = AcceptanceSuite(seed=3).short_return_checks(triples=10)
        assert disagreements == 0
        assert len(estimates) == 3

    def test_run_selected_criteria(self):
        """Test running a subset in the given order."""
        results = AcceptanceSuite().run([6])
        assert [r.number for r in results] == [6]

    def test_unknown_criterion(self):
        """Test that unknown criterion numbers raise."""
        with pytest.raises(ValueError, match="Unknown acceptance criteria"):
            AcceptanceSuite().run([6, 99])

    def test_all_criteria_registered(self):
        """Test that criteria 1 to 10 are available."""
        assert sorted(AcceptanceSuite().criteria()) == list(range(1, 11))


@pytest.mark.slow
class TestSlowCriteria:
    """Statistical acceptance runs at full budget."""

    def test_determinism(self, temp_dir):
        """Test byte-identical law CSVs across thread counts."""
        assert AcceptanceSuite(seed=0, work_dir=temp_dir).criterion_10().passed

    def test_short_return_suite(self):
        """Test the short-return suite at full size."""
        assert AcceptanceSuite(seed=0).criterion_8().passed

    def test_oracle_equivalence(self):
        """Test the oracle equivalence suite at full size."""
        assert AcceptanceSuite(seed=0).criterion_9().passed

    def test_expanding_laws(self):
        """Test the expanding hitting and return laws."""
        suite = AcceptanceSuite(seed=0)
        assert suite.criterion_1().passed
        assert suite.criterion_2().passed

    def test_intermittent_hitting_law(self):
        """Test the intermittent hitting law on three centers."""
        suite = AcceptanceSuite(seed=0)
        result = suite.criterion_3()
        assert result.passed, result.observed
        assert len(suite.intermittent_run.hitting_ks) == 3
        assert max(suite.intermittent_run.hitting_ks) <= 0.10
        assert all(c >= 0.05 for c in suite.intermittent_run.centers)

    def test_product_law_bridge(self):
        """Test the gap between the empirical and product laws."""
        suite = AcceptanceSuite(seed=0)
        result = suite.criterion_4()
        assert result.passed, result.observed
        assert all(0.0 <= gap <= 0.10 for gap in suite.expanding_run.product_gaps)

    def test_kac_normalisation(self):
        """Test Kac ratios of both systems."""
        suite = AcceptanceSuite(seed=0)
        result = suite.criterion_5()
        assert result.passed, result.observed
        ratios = suite.expanding_run.kac_ratios + suite.intermittent_run.kac_ratios
        assert len(ratios) == 6
        assert all(0.85 <= r <= 1.15 for r in ratios)

    def test_scaling_suite(self):
        """Test the diameter, correlation and geometric slopes."""
        suite = AcceptanceSuite(seed=0)
        result = suite.criterion_7()
        assert result.passed, result.observed
        slopes = suite.scaling_slopes()
        assert abs(slopes["diameter_slope"] + 1.0 / 0.3) <= 0.25 / 0.3
        assert slopes["sampled_diameter_slope"] <= -0.75 / 0.3
        assert slopes["pm_correlation_slope"] <= -0.7 * (1.0 / 0.3 - 1.0)
        assert slopes["expanding_semilog_slope"] < 0.0
