"""
Balls, ball masses and sampling against density grids, plus the geometric
audits of measure scaling.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from quench.core.transfer import DensityContractError, DensityGrid
from quench.utils.counter import counter_uniform
from quench.utils.fitting import loglog_fit

logger = logging.getLogger(__name__)

STREAM_CENTERS = 0x43454E54


class MeasureDomainError(ValueError):
    """Raised for zero-mass balls, zero denominators or invalid radii."""
    pass


@dataclass(frozen=True)
class Ball:
    """Closed ball B_rho(x) clipped to [0, 1]."""

    center: float
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.center <= 1.0:
            raise MeasureDomainError(f"Ball center must lie in [0, 1], got {self.center}")
        if not self.radius > 0:
            raise MeasureDomainError(f"Ball radius must be positive, got {self.radius}")

    @property
    def lo(self) -> float:
        return max(0.0, self.center - self.radius)

    @property
    def hi(self) -> float:
        return min(1.0, self.center + self.radius)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x):
        arr = np.asarray(x, dtype=float)
        inside = (arr >= self.lo) & (arr <= self.hi)
        return bool(inside) if inside.ndim == 0 else inside


def interval_mass(f: DensityGrid, lo: float, hi: float) -> float:
    """Mass of [lo, hi] under f, linear inside partially covered bins."""
    if hi <= lo:
        return 0.0
    return max(0.0, f.cdf(hi) - f.cdf(lo))


def ball_measure(f: DensityGrid, ball: Ball) -> float:
    return interval_mass(f, ball.lo, ball.hi)


def inverse_cdf(f: DensityGrid, u) -> np.ndarray:
    """Map uniform variates through the inverse of f's piecewise-linear CDF."""
    u = np.asarray(u, dtype=float)
    nodes = f.cdf_nodes
    idx = np.clip(np.searchsorted(nodes, u, side="right") - 1, 0, f.bins - 1)
    bin_mass = f.masses[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(bin_mass > 0, (u - nodes[idx]) / bin_mass, 0.5)
    x = (idx + np.clip(frac, 0.0, 1.0)) / f.bins
    return float(x) if x.ndim == 0 else x


def sample_point(f: DensityGrid, rng: np.random.Generator, size=None):
    """Draw from f by inverse-CDF sampling of uniforms from ``rng``."""
    return inverse_cdf(f, rng.random(size))


def _inverse_cdf_on(f: DensityGrid, lo: float, hi: float, u) -> np.ndarray:
    c_lo, c_hi = f.cdf(lo), f.cdf(hi)
    if c_hi - c_lo <= 0:
        raise MeasureDomainError(f"Interval [{lo}, {hi}] has zero mass")
    x = inverse_cdf(f, c_lo + np.asarray(u, dtype=float) * (c_hi - c_lo))
    return np.clip(x, lo, hi)


def conditional_quantile(f: DensityGrid, ball: Ball, u) -> np.ndarray:
    """
    Conditional inverse CDF of f restricted to the ball.

    Raises:
        MeasureDomainError: If the ball has zero mass under f
    """
    x = _inverse_cdf_on(f, ball.lo, ball.hi, u)
    return float(x) if np.ndim(x) == 0 else x


def conditional_sample(f: DensityGrid, ball: Ball, rng: np.random.Generator, size=None):
    return conditional_quantile(f, ball, rng.random(size))


def sample_centers(f: DensityGrid, count: int, margin: float = 0.0, seed: int = 0) -> np.ndarray:
    """
    Ball centers drawn from f restricted to [margin, 1].

    Centers are keyed by (seed, center index), so the first k of a larger
    draw equal a draw of k.
    """
    if count < 1:
        raise MeasureDomainError(f"Center count must be >= 1, got {count}")
    u = counter_uniform(seed, STREAM_CENTERS, np.arange(count, dtype=np.int64))
    return np.atleast_1d(_inverse_cdf_on(f, margin, 1.0, u))


def annulus_ratio(f: DensityGrid, denom: DensityGrid, x: float, rho: float, r: float) -> float:
    """
    f(B_{rho+r}(x) minus B_{rho-r}(x)) / denom(B_rho(x)).

    Raises:
        MeasureDomainError: If r is not in (0, rho) or the denominator vanishes
    """
    if not 0 < r < rho:
        raise MeasureDomainError(f"Annulus width must satisfy 0 < r < rho, got r={r}, rho={rho}")
    outer = ball_measure(f, Ball(x, rho + r))
    inner = ball_measure(f, Ball(x, rho - r))
    base = ball_measure(denom, Ball(x, rho))
    if base <= 0:
        raise MeasureDomainError(f"Ball B_{rho}({x}) has zero mass in the denominator")
    return (outer - inner) / base


def k_ratio_audit(marginal: DensityGrid, quenched: Sequence[DensityGrid], x: float, rho: float) -> Tuple[float, float]:
    """
    Extremes of mu(B) / mu^w(B) over a quenched ensemble.

    Raises:
        MeasureDomainError: If the ball has zero mass under any density
    """
    ball = Ball(x, rho)
    top = ball_measure(marginal, ball)
    ratios = []
    for density in quenched:
        if density.bins != marginal.bins:
            raise DensityContractError(f"Bin count mismatch: {density.bins} != {marginal.bins}")
        mass = ball_measure(density, ball)
        if mass <= 0 or top <= 0:
            raise MeasureDomainError(f"Ball B_{rho}({x}) has zero mass")
        ratios.append(top / mass)
    return float(min(ratios)), float(max(ratios))


@dataclass(frozen=True)
class ScalingSummary:
    """Per-center log-log slopes of ball mass against radius."""

    slopes: Tuple[float, ...]
    rho_range: Tuple[float, float]
    excluded: int

    @property
    def minimum(self) -> float:
        return float(np.min(self.slopes))

    @property
    def median(self) -> float:
        return float(np.median(self.slopes))

    @property
    def maximum(self) -> float:
        return float(np.max(self.slopes))

    def to_dict(self) -> Dict[str, float]:
        return {
            "min": self.minimum,
            "median": self.median,
            "max": self.maximum,
            "rho_range": list(self.rho_range),
            "excluded": self.excluded,
            "centers": len(self.slopes),
        }


def scaling_audit(f: DensityGrid, centers: Sequence[float], rhos: Sequence[float]) -> ScalingSummary:
    """
    Fit the exponent of f(B_rho(x)) ~ rho^d at each center.

    Balls with zero mass are dropped from a center's fit; a center left with
    fewer than two radii is excluded and counted.

    Raises:
        MeasureDomainError: If the radius grid spans less than two decades
            or every center is excluded
    """
    rhos = np.asarray(sorted(rhos), dtype=float)
    if rhos.size < 2 or rhos[-1] / rhos[0] < 100.0 * (1 - 1e-9):
        raise MeasureDomainError("Radius grid must span at least two decades")
    slopes: List[float] = []
    excluded = 0
    for x in centers:
        masses = np.array([ball_measure(f, Ball(float(x), rho)) for rho in rhos])
        fit = loglog_fit(rhos, masses, floor=0.0)
        if fit is None or fit.n_points < 2:
            excluded += 1
            continue
        slopes.append(fit.slope)
    if excluded:
        logger.warning(f"Scaling audit excluded {excluded} centers with zero-mass balls")
    if not slopes:
        raise MeasureDomainError("Every center had zero-mass balls")
    return ScalingSummary(tuple(slopes), (float(rhos[0]), float(rhos[-1])), excluded)
