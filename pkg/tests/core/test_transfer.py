"""
Tests for density grids, Ulam matrices and quenched densities.
"""
import numpy as np
import pytest

from quench.core.driving import DrivingConfig, Realisation
from quench.core.maps import FiberMap, MapSystem
from quench.core.transfer import (
    DensityContractError,
    DensityGrid,
    bv_norm,
    doeblin_fortet_probe,
    fiber_densities,
    invariance_residual,
    l1_distance,
    l1_norm,
    marginal_density,
    push_density,
    quenched_density,
    ulam_matrix,
    variation,
)


@pytest.fixture
def omega():
    return Realisation(DrivingConfig((0.5, 0.5), seed=7))


class TestDensityGrid:
    """Test suite for DensityGrid."""

    def test_uniform(self):
        """Test the uniform density and its derived arrays."""
        f = DensityGrid.uniform(8)
        assert f.bins == 8
        assert f.mass() == pytest.approx(1.0)
        assert f.edges[0] == 0.0 and f.edges[-1] == 1.0
        assert f.cdf(0.25) == pytest.approx(0.25)
        assert f.cdf_nodes[-1] == 1.0

    def test_from_values_normalises(self):
        """Test that from_values rescales to unit mass."""
        f = DensityGrid.from_values(np.array([1.0, 3.0]))
        assert np.allclose(f.values, [0.5, 1.5])

    def test_contract_violations(self):
        """Test negative values, wrong mass and too few bins."""
        with pytest.raises(DensityContractError):
            DensityGrid(np.array([-1.0, 3.0]))
        with pytest.raises(DensityContractError):
            DensityGrid(np.array([1.0, 2.0]))
        with pytest.raises(DensityContractError):
            DensityGrid(np.array([1.0]))
        with pytest.raises(DensityContractError):
            DensityGrid.from_values(np.zeros(4))

    def test_values_read_only(self):
        """Test that density values cannot be modified in place."""
        f = DensityGrid.uniform(4)
        with pytest.raises(ValueError):
            f.values[0] = 2.0

    def test_integrate(self):
        """Test integration of grid functions."""
        f = DensityGrid.from_values(np.array([2.0, 0.0]))
        assert f.integrate(np.array([1.0, 5.0])) == pytest.approx(1.0)


class TestNorms:
    """Test suite for variation and norms."""

    def test_variation(self):
        """Test interior and boundary variation."""
        values = np.array([1.0, 3.0, 2.0])
        assert variation(values) == pytest.approx(3.0)
        assert variation(values, include_boundary=True) == pytest.approx(6.0)

    def test_norms(self):
        """Test L1 and BV norms."""
        values = np.array([1.0, -1.0])
        assert l1_norm(values) == pytest.approx(1.0)
        assert bv_norm(values) == pytest.approx(3.0)

    def test_distance_bin_mismatch(self):
        """Test that distances between different grids raise."""
        with pytest.raises(DensityContractError):
            l1_distance(DensityGrid.uniform(4), DensityGrid.uniform(8))


class TestUlamMatrix:
    """Test suite for Ulam matrices."""

    @pytest.mark.parametrize("fmap", [FiberMap.linear(2), FiberMap.linear(3), FiberMap.pomeau_manneville(0.3)])
    def test_column_stochastic(self, fmap):
        """Test that every column sums to one and entries are nonnegative."""
        P = ulam_matrix(fmap, 256)
        assert np.allclose(P.column_sums(), 1.0, atol=1e-12)
        assert P.dense().min() >= 0.0

    def test_doubling_structure(self):
        """Test that each doubling source bin sends half its mass to two targets."""
        P = ulam_matrix(FiberMap.linear(2), 8).dense()
        assert P[0, 0] == pytest.approx(0.5)
        assert P[1, 0] == pytest.approx(0.5)
        assert P[0, 4] == pytest.approx(0.5)
        assert np.count_nonzero(P[:, 3]) == 2

    def test_lebesgue_fixed_by_linear_maps(self):
        """Test that the uniform density is invariant under k x mod 1."""
        for k in (2, 3, 5):
            pushed = push_density(ulam_matrix(FiberMap.linear(k), 128), DensityGrid.uniform(128))
            assert np.allclose(pushed.values, 1.0, atol=1e-12)

    def test_too_few_bins(self):
        """Test that a one-bin matrix is rejected."""
        with pytest.raises(DensityContractError):
            ulam_matrix(FiberMap.linear(2), 1)

    def test_push_bin_mismatch(self):
        """Test that pushing a density of the wrong size raises."""
        with pytest.raises(DensityContractError):
            push_density(ulam_matrix(FiberMap.linear(2), 16), DensityGrid.uniform(8))


class TestQuenchedDensity:
    """Test suite for pullback densities."""

    def test_expanding_is_uniform(self, omega):
        """Test that affine full-branch systems have the uniform quenched density."""
        f = quenched_density(MapSystem.expanding([2, 3]), omega, 20, 256)
        assert np.allclose(f.values, 1.0, atol=1e-9)
        assert f.convergence < 1e-9

    def test_pm_density_shape(self, omega):
        """Test that intermittent densities pile up at the neutral point."""
        f = quenched_density(MapSystem.pomeau_manneville([0.1, 0.3]), omega, 60, 512)
        assert f.mass() == pytest.approx(1.0)
        assert f.values[0] > 1.0 > f.values[-1]
        assert f.convergence is not None and f.convergence < 0.05

    def test_invalid_depth(self, omega):
        """Test n_pull >= 1."""
        with pytest.raises(DensityContractError):
            quenched_density(MapSystem.expanding([2]), omega, 0, 64)

    def test_invariance_residual(self, omega):
        """Test that L_w h_w is close to h_{theta w}."""
        assert invariance_residual(MapSystem.expanding([2, 3]), omega, 128, 20) < 1e-10
        assert invariance_residual(MapSystem.pomeau_manneville([0.1, 0.3]), omega, 256, 60) < 1e-2

    def test_fiber_densities(self, omega):
        """Test that fiber_densities yields n + 1 unit-mass densities starting from h_w."""
        system = MapSystem.pomeau_manneville([0.1, 0.3])
        h = quenched_density(system, omega, 30, 128)
        densities = list(fiber_densities(system, omega, h, 4))
        assert len(densities) == 5
        assert densities[0] is h
        assert all(d.mass() == pytest.approx(1.0) for d in densities)

    def test_marginal_independent_of_threads(self):
        """Test that the marginal density is identical for one and several workers."""
        system = MapSystem.pomeau_manneville([0.1, 0.3])
        config = DrivingConfig((0.5, 0.5), seed=4)
        single = marginal_density(system, config, 4, 20, 128, threads=1)
        pooled = marginal_density(system, config, 4, 20, 128, threads=3)
        assert np.array_equal(single.values, pooled.values)


class TestDoeblinFortetProbe:
    """Test suite for the variation-inequality probe."""

    def test_expanding_contracts_variation(self, omega):
        """Test that the fitted contraction factor is below one for expanding maps."""
        fit = doeblin_fortet_probe(MapSystem.expanding([2, 3]), omega, 4, 16, bins=256, seed=1)
        assert 0.0 <= fit.eta < 1.0
        assert fit.constant >= 0.0
        assert fit.trials == 16 and fit.depth == 4
        assert set(fit.to_dict()) == {"eta", "constant", "violation_fraction", "trials", "depth", "max_bv_ratio"}

    def test_invalid_arguments(self, omega):
        """Test trials >= 1 and n >= 1."""
        with pytest.raises(DensityContractError):
            doeblin_fortet_probe(MapSystem.expanding([2]), omega, 0, 4, bins=64)
