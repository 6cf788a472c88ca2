"""
Tests for fiber maps, compositions and cylinder diagnostics.
"""
import math

import numpy as np
import pytest

from quench.core.driving import DrivingConfig, Realisation
from quench.core.maps import (
    Branch,
    BranchKind,
    CylinderCapError,
    FiberMap,
    MapDomainError,
    MapSystem,
    compose_apply,
    cylinder_diameter_profile,
    cylinder_partition,
    diameter_envelope,
    distortion_exponent,
    distortion_profile,
    expansion_constant,
    image_of_interval,
    iter_cylinder_partitions,
)


def constant(symbol: int, alphabet: int = 2) -> Realisation:
    weights = tuple(1.0 if k == symbol else 0.0 for k in range(alphabet))
    return Realisation(DrivingConfig(weights))


class TestFiberMap:
    """Test suite for single fiber maps."""

    def test_linear_map(self):
        """Test x -> k x mod 1."""
        tripling = FiberMap.linear(3)
        assert tripling.apply(0.5) == pytest.approx(0.5)
        assert tripling.apply(0.2) == pytest.approx(0.6)
        assert np.allclose(tripling.apply(np.array([0.1, 0.4, 0.9])), [0.3, 0.2, 0.7])

    def test_scalar_in_scalar_out(self):
        """Test that scalar inputs give Python floats."""
        assert isinstance(FiberMap.linear(2).apply(0.3), float)

    def test_branch_index_half_open(self):
        """Test that breakpoints belong to the branch on their right and 1 to the last."""
        doubling = FiberMap.linear(2)
        assert list(doubling.branch_index([0.0, 0.5, 0.99, 1.0])) == [0, 1, 1, 1]

    def test_inverse_round_trip(self):
        """Test inverse branches against forward evaluation for affine and neutral branches."""
        x = np.linspace(0.0, 1.0, 2001, endpoint=False)
        for fmap in (FiberMap.linear(2), FiberMap.linear(5), FiberMap.pomeau_manneville(0.3),
                     FiberMap.pomeau_manneville(0.7)):
            back = fmap.inverse_by_index(fmap.branch_index(x), np.asarray(fmap.apply(x)))
            assert np.max(np.abs(back - x)) < 1e-10

    def test_inverse_outside_image(self):
        """Test that values outside a branch image raise."""
        branch = Branch(0.5, 1.0, BranchKind.AFFINE, slope=4.0, intercept=-2.0)
        with pytest.raises(MapDomainError):
            branch.inverse(3.0)

    def test_pomeau_manneville_shape(self):
        """Test the neutral fixed point and the full-branch property."""
        pm = FiberMap.pomeau_manneville(0.3)
        assert pm.apply(0.0) == 0.0
        assert pm.derivative(0.0) == pytest.approx(1.0)
        assert pm.branches[0].image == pytest.approx((0.0, 1.0))
        assert pm.apply(0.75) == pytest.approx(0.5)

    def test_paper_coefficient_clamps(self):
        """Test the alternative left-branch coefficient."""
        pm = FiberMap.pomeau_manneville(0.3, paper_coefficient=True)
        assert pm.branches[0].coefficient == pytest.approx(2.0 ** 1.3)
        assert pm.apply(0.49) <= 1.0

    def test_invalid_maps(self):
        """Test parameter validation."""
        with pytest.raises(MapDomainError):
            FiberMap.linear(1.5)
        with pytest.raises(MapDomainError):
            FiberMap.pomeau_manneville(1.2)
        with pytest.raises(MapDomainError):
            FiberMap((Branch(0.0, 0.5, BranchKind.AFFINE, slope=2.0),))

    def test_image_of_wraps(self):
        """Test the image of an interval straddling a breakpoint."""
        pieces = FiberMap.linear(2).image_of(0.4, 0.6)
        assert pieces == [pytest.approx((0.8, 1.0)), pytest.approx((0.0, 0.2))]


class TestCompositions:
    """Test suite for random compositions and interval images."""

    @pytest.fixture
    def system(self):
        return MapSystem.expanding([2, 3])

    @pytest.fixture
    def omega(self):
        return Realisation(DrivingConfig((0.5, 0.5), seed=11))

    def test_compose_matches_stepwise(self, system, omega):
        """Test that compose_apply equals applying the fiber maps one by one."""
        x = 0.1234
        expected = x
        for i in range(7):
            expected = system[omega.symbol_at(i)].apply(expected)
        assert compose_apply(system, omega, 7, x) == expected

    def test_compose_zero_is_identity(self, system, omega):
        """Test n = 0."""
        assert compose_apply(system, omega, 0, 0.37) == 0.37

    def test_compose_negative_raises(self, system, omega):
        """Test that negative depth raises."""
        with pytest.raises(MapDomainError):
            compose_apply(system, omega, -1, 0.5)

    def test_image_contains_orbit_points(self, system, omega):
        """Test that images of an interval contain the images of its points."""
        lo, hi = 0.31, 0.3125
        image = image_of_interval(system, omega, 5, (lo, hi))
        points = np.asarray(compose_apply(system, omega, 5, np.linspace(lo, hi, 101)))
        assert image.contains(points).all()

    def test_image_measure_expands(self, system, omega):
        """Test that an affine image has length slope product times the original, up to wrapping."""
        lo, hi = 0.3, 0.3 + 1e-4
        image = image_of_interval(system, omega, 3, (lo, hi))
        factor = np.prod([2 if s == 0 else 3 for s in omega.symbols(0, 3)])
        assert image.measure == pytest.approx(factor * 1e-4, rel=1e-6)


class TestCylinders:
    """Test suite for cylinder partitions and diameter profiles."""

    def test_doubling_diameters_exact(self):
        """Test that doubling cylinders at depth n all have length 2^-n."""
        system = MapSystem.expanding([2])
        omega = Realisation(DrivingConfig((1.0,)))
        profile = cylinder_diameter_profile(system, omega, 10)
        assert np.array_equal(profile, 2.0 ** -np.arange(1, 11))

    def test_partition_covers_interval(self):
        """Test that cells tile [0, 1) without gaps."""
        system = MapSystem.expanding([2, 3])
        partition = cylinder_partition(system, Realisation(DrivingConfig((0.5, 0.5), seed=3)), 4)
        assert partition.left[0] == 0.0
        assert partition.right[-1] == 1.0
        assert np.allclose(partition.right[:-1], partition.left[1:])
        assert partition.lengths.sum() == pytest.approx(1.0)

    def test_iterated_partitions_refine(self):
        """Test that the partition stream matches direct refinement at every depth."""
        system = MapSystem.expanding([2, 3])
        omega = Realisation(DrivingConfig((0.5, 0.5), seed=3))
        partitions = list(iter_cylinder_partitions(system, omega, 4))
        assert [p.depth for p in partitions] == [1, 2, 3, 4]
        for p in partitions:
            direct = cylinder_partition(system, omega, p.depth)
            assert np.array_equal(p.left, direct.left)
            assert np.array_equal(p.right, direct.right)
        assert [len(p) for p in partitions] == sorted(len(p) for p in partitions)

    def test_cell_words_match_orbits(self):
        """Test that the points of a cell follow the cell's branch word."""
        system = MapSystem.expanding([2, 3])
        omega = Realisation(DrivingConfig((0.5, 0.5), seed=5))
        partition = cylinder_partition(system, omega, 3)
        lo, hi, word = partition.cell(len(partition) // 2)
        x = 0.5 * (lo + hi)
        for step, branch in enumerate(word):
            fmap = system[omega.symbol_at(step)]
            assert int(fmap.branch_index(x)) == branch
            x = fmap.apply(x)

    def test_cell_count(self):
        """Test that a depth-n partition has the product of branch counts as cells."""
        system = MapSystem.expanding([2, 3])
        omega = Realisation(DrivingConfig((0.5, 0.5), seed=8))
        n = 5
        expected = int(np.prod([2 if s == 0 else 3 for s in omega.symbols(0, n)]))
        assert len(cylinder_partition(system, omega, n)) == expected

    def test_cell_cap(self):
        """Test that exceeding the cell cap raises with the cap in the message."""
        system = MapSystem.expanding([3])
        with pytest.raises(CylinderCapError, match="cell cap of 100"):
            cylinder_partition(system, Realisation(DrivingConfig((1.0,))), 6, cap=100)

    def test_depth_must_be_positive(self):
        """Test n >= 1."""
        with pytest.raises(MapDomainError):
            cylinder_partition(MapSystem.expanding([2]), Realisation(DrivingConfig((1.0,))), 0)

    def test_pm_leftmost_cell_dominates(self):
        """Test that the neutral cell carries the maximal length and decays polynomially."""
        system = MapSystem.pomeau_manneville([0.1, 0.3])
        omega = constant(1)
        profile = cylinder_diameter_profile(system, omega, 40)
        partition = cylinder_partition(system, omega, 12)
        assert partition.lengths.max() == pytest.approx(partition.lengths[0])
        slope = np.polyfit(np.log(np.arange(20, 41)), np.log(profile[19:40]), 1)[0]
        assert -1.25 / 0.3 < slope < -0.75 / 0.3

    def test_envelope_dominates_members(self):
        """Test that the envelope is at least every member profile."""
        system = MapSystem.pomeau_manneville([0.1, 0.3])
        members = [constant(0), constant(1), Realisation(DrivingConfig((0.5, 0.5), seed=2))]
        envelope = diameter_envelope(system, members, 15)
        for omega in members:
            assert np.all(envelope >= cylinder_diameter_profile(system, omega, 15) * (1 - 1e-9))
        assert np.all(np.diff(envelope) <= 0)


class TestDistortionAndExpansion:
    """Test suite for distortion profiles and the expansion constant."""

    def test_affine_distortion_is_one(self):
        """Test that affine systems have no distortion."""
        system = MapSystem.expanding([2, 3])
        profile = distortion_profile(system, Realisation(DrivingConfig((0.5, 0.5), seed=1)), 6)
        assert np.allclose(profile, 1.0, atol=1e-12)
        assert distortion_exponent(profile) == 0.0

    def test_pm_distortion_bounded_below(self):
        """Test that intermittent distortion is at least one and finite."""
        system = MapSystem.pomeau_manneville([0.1, 0.3])
        profile = distortion_profile(system, Realisation(DrivingConfig((0.5, 0.5), seed=1)), 6)
        assert np.all(profile >= 1.0)
        assert np.all(np.isfinite(profile))

    def test_expansion_constant_two_three(self):
        """Test A = 3 + 1/2 for the doubling/tripling system."""
        assert expansion_constant(MapSystem.expanding([2, 3])) == pytest.approx(3.5)

    def test_expansion_constant_pm(self):
        """Test A = (2 + alpha_max) + 1 for the intermittent system."""
        assert expansion_constant(MapSystem.pomeau_manneville([0.1, 0.3])) == pytest.approx(3.3)
        assert math.isfinite(expansion_constant(MapSystem.pomeau_manneville([0.2])))
