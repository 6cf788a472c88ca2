"""
Tests for short-return sets.
"""
import math

import numpy as np
import pytest

from quench.core.driving import DrivingConfig, Realisation
from quench.core.maps import MapSystem
from quench.core.short_returns import (
    SetEstimate,
    ShortReturnConfig,
    ShortReturnConfigError,
    default_horizon_scale,
    fit_short_return_decay,
    level_set_measure,
    return_levels,
    short_return_indicator,
    short_return_profile,
    very_short_set_measure,
)
from quench.core.transfer import DensityGrid


@pytest.fixture
def doubling():
    return MapSystem.expanding([2])


@pytest.fixture
def always():
    return Realisation(DrivingConfig((1.0,)))


@pytest.fixture
def system():
    return MapSystem.expanding([2, 3])


@pytest.fixture
def omega():
    return Realisation(DrivingConfig((0.5, 0.5), seed=13))


class TestHorizon:
    """Test suite for the short-return horizon."""

    def test_default_scale(self, system):
        """Test a = 1 / (4 log 3.5) for the doubling/tripling system."""
        assert default_horizon_scale(system) == pytest.approx(1.0 / (4.0 * math.log(3.5)))

    def test_horizon_values(self, system):
        """Test J(rho) = floor(a |log rho|)."""
        assert ShortReturnConfig(a=0.5).horizon(system, 1e-2) == 2
        assert ShortReturnConfig().horizon(system, 1e-3) == 1
        assert ShortReturnConfig().horizon(system, 1e-10) == 4

    def test_horizon_below_one(self, system):
        """Test that radii too large for the scale are rejected."""
        with pytest.raises(ShortReturnConfigError, match="Horizon"):
            ShortReturnConfig().horizon(system, 1e-2)

    @pytest.mark.parametrize("kwargs", [
        {"a": -1.0},
        {"b": 1.0},
        {"rhos": (0.6,)},
        {"rhos": ()},
        {"n_centers": 0},
    ])
    def test_invalid_config(self, kwargs):
        """Test configuration validation."""
        with pytest.raises(ShortReturnConfigError):
            ShortReturnConfig(**kwargs)


class TestIndicator:
    """Test suite for exact short-return membership."""

    def test_period_two_center(self, doubling, always):
        """Test that the ball around 1/3 first meets its own image at n = 2."""
        assert not short_return_indicator(doubling, always, 1 / 3, 1e-3, 2)
        assert short_return_indicator(doubling, always, 1 / 3, 1e-3, 3)

    def test_return_levels(self, doubling, always):
        """Test the per-level intersections of the period-two ball."""
        assert list(return_levels(doubling, always, 1 / 3, 1e-3, 4)) == [False, True, False, True]

    def test_fixed_point(self, doubling, always):
        """Test that a ball at the fixed point returns immediately."""
        assert short_return_indicator(doubling, always, 0.0, 1e-3, 2)

    def test_monotone_in_radius_and_horizon(self, system, omega):
        """Test that larger balls and longer horizons only add short returns."""
        for x in np.linspace(0.02, 0.98, 25):
            by_radius = [short_return_indicator(system, omega, float(x), rho, 4) for rho in (1e-3, 1e-2, 5e-2)]
            by_horizon = [short_return_indicator(system, omega, float(x), 1e-2, j) for j in (2, 3, 5)]
            assert by_radius == sorted(by_radius)
            assert by_horizon == sorted(by_horizon)

    def test_horizon_one_is_empty(self, doubling, always):
        """Test that J = 1 leaves no levels to check."""
        assert not short_return_indicator(doubling, always, 0.0, 1e-3, 1)
        with pytest.raises(ShortReturnConfigError):
            short_return_indicator(doubling, always, 0.0, 1e-3, 0)


class TestSetMeasures:
    """Test suite for Monte Carlo set measures."""

    def test_from_hits(self):
        """Test the binomial estimate and standard error."""
        est = SetEstimate.from_hits(np.array([True, False, False, True]))
        assert est.estimate == pytest.approx(0.5)
        assert est.std_error == pytest.approx(0.25)
        assert est.n_centers == 4

    def test_very_short_set(self, system, omega):
        """Test that the short-return set is a small fraction of the centers."""
        cfg = ShortReturnConfig(a=0.5, rhos=(1e-2,), n_centers=300, seed=1)
        est = very_short_set_measure(system, omega, 1e-2, cfg, DensityGrid.uniform(512))
        assert 0.0 <= est.estimate < 0.2
        assert est.n_centers == 300

    def test_profile_matches_levels(self, system, omega):
        """Test that the profile shares centers with single-level estimates."""
        f = DensityGrid.uniform(512)
        profile = short_return_profile(system, omega, 1e-2, 4, f, 100, seed=3)
        assert len(profile) == 4
        for n in (1, 3):
            single = level_set_measure(system, omega, n, 1e-2, f, 100, seed=3)
            assert single.estimate == profile[n - 1].estimate

    def test_invalid_levels(self, system, omega):
        """Test level and profile-length validation."""
        f = DensityGrid.uniform(64)
        with pytest.raises(ShortReturnConfigError):
            level_set_measure(system, omega, 0, 1e-2, f, 10)
        with pytest.raises(ShortReturnConfigError):
            short_return_profile(system, omega, 1e-2, 0, f, 10)


class TestDecayFit:
    """Test suite for the competing decay fits."""

    def test_recovers_sqrt_log_model(self):
        """Test that exact sqrt-log data is fitted and preferred."""
        rhos = np.array([1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
        values = 2.0 * np.exp(-1.5 * np.sqrt(-np.log(rhos)))
        fit = fit_short_return_decay(rhos, values)
        assert fit.constant == pytest.approx(2.0, rel=1e-6)
        assert fit.rate == pytest.approx(1.5, rel=1e-6)
        assert fit.preferred == "sqrt-log"
        assert fit.to_dict()["n_points"] == 5

    def test_recovers_power_law(self):
        """Test that exact power-law data prefers the power model."""
        rhos = np.array([1e-2, 1e-3, 1e-4, 1e-5])
        fit = fit_short_return_decay(rhos, 3.0 * rhos ** 0.5)
        assert fit.power_exponent == pytest.approx(0.5, rel=1e-6)
        assert fit.preferred == "power"

    def test_needs_two_positive_points(self):
        """Test that zero estimates are dropped before fitting."""
        assert fit_short_return_decay([1e-2, 1e-3, 1e-4], [0.1, 0.0, 0.0]) is None
