"""
Short-return sets: centers whose ball meets one of its own first images.

Membership is decided exactly by intersecting the ball with the interval
unions T^n_w(B), so no orbit sampling is involved.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from quench.core.driving import Realisation
from quench.core.maps import MapSystem, expansion_constant, iter_images
from quench.core.measures import Ball, sample_centers
from quench.core.transfer import DensityGrid
from quench.utils.intervals import IntervalUnion

logger = logging.getLogger(__name__)


class ShortReturnConfigError(ValueError):
    """Raised when the short-return horizon or sampling budget is invalid."""
    pass


def default_horizon_scale(system: MapSystem) -> float:
    """(4 log A)^-1 for the system's expansion constant A."""
    return 1.0 / (4.0 * math.log(expansion_constant(system)))


@dataclass(frozen=True)
class ShortReturnConfig:
    """
    Short-return budget.

    ``a`` scales the horizon J(rho) = floor(a |log rho|); None selects
    (4 log A)^-1. ``b`` in (0, 1) splits short returns at b J.
    """

    a: Optional[float] = None
    b: float = 0.25
    rhos: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    n_centers: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rhos", tuple(float(r) for r in self.rhos))
        if self.a is not None and not self.a > 0:
            raise ShortReturnConfigError(f"a must be positive, got {self.a}")
        if not 0 < self.b < 1:
            raise ShortReturnConfigError(f"b must lie in (0, 1), got {self.b}")
        if not self.rhos or any(not 0 < r < 0.5 for r in self.rhos):
            raise ShortReturnConfigError(f"Radii must lie in (0, 1/2), got {self.rhos}")
        if self.n_centers < 1:
            raise ShortReturnConfigError(f"n_centers must be >= 1, got {self.n_centers}")

    def scale(self, system: MapSystem) -> float:
        return self.a if self.a is not None else default_horizon_scale(system)

    def horizon(self, system: MapSystem, rho: float) -> int:
        """
        J(rho) = floor(a |log rho|).

        Raises:
            ShortReturnConfigError: If J(rho) < 1
        """
        horizon = int(math.floor(self.scale(system) * abs(math.log(rho))))
        if horizon < 1:
            raise ShortReturnConfigError(
                f"Horizon J({rho}) = {horizon} < 1 with a = {self.scale(system):.4g}; "
                f"use a smaller radius or a larger a"
            )
        return horizon


@dataclass(frozen=True)
class SetEstimate:
    """Monte Carlo estimate of a set's measure with its standard error."""

    estimate: float
    std_error: float
    n_centers: int

    @classmethod
    def from_hits(cls, hits: np.ndarray) -> "SetEstimate":
        hits = np.asarray(hits, dtype=float)
        p = float(hits.mean())
        return cls(p, math.sqrt(p * (1.0 - p) / hits.size), int(hits.size))


def return_levels(system: MapSystem, omega: Realisation, x: float, rho: float, n_max: int) -> np.ndarray:
    """Boolean array whose entry n-1 tells whether B_rho(x) meets T^n_w B_rho(x), n = 1..n_max."""
    ball = Ball(x, rho)
    levels = np.zeros(n_max, dtype=bool)
    for n, image in enumerate(iter_images(system, omega, IntervalUnion.interval(ball.lo, ball.hi), n_max)):
        levels[n] = image.intersects(ball.lo, ball.hi)
    return levels


def short_return_indicator(system: MapSystem, omega: Realisation, x: float, rho: float, horizon: int) -> bool:
    """
    Whether B_rho(x) meets T^n_w B_rho(x) for some 1 <= n < horizon.

    Raises:
        ShortReturnConfigError: If horizon < 1
    """
    if horizon < 1:
        raise ShortReturnConfigError(f"Horizon must be >= 1, got {horizon}")
    if horizon == 1:
        return False
    ball = Ball(x, rho)
    for image in iter_images(system, omega, IntervalUnion.interval(ball.lo, ball.hi), horizon - 1):
        if image.intersects(ball.lo, ball.hi):
            return True
    return False


def _centers(f_hat: DensityGrid, n_centers: int, seed: int) -> np.ndarray:
    if n_centers < 1:
        raise ShortReturnConfigError(f"Need at least one center, got {n_centers}")
    return sample_centers(f_hat, n_centers, seed=seed)


def level_set_measure(system: MapSystem, omega: Realisation, n: int, rho: float, f_hat: DensityGrid,
                      n_centers: int, seed: int = 0) -> SetEstimate:
    """Estimate the measure of {x : B_rho(x) meets T^n_w B_rho(x)} with centers drawn from f_hat."""
    if n < 1:
        raise ShortReturnConfigError(f"Level must be >= 1, got {n}")
    centers = _centers(f_hat, n_centers, seed)
    hits = np.array([return_levels(system, omega, float(x), rho, n)[-1] for x in centers])
    return SetEstimate.from_hits(hits)


def very_short_set_measure(system: MapSystem, omega: Realisation, rho: float, cfg: ShortReturnConfig,
                           f_hat: DensityGrid) -> SetEstimate:
    """Estimate the measure of the short-return set at radius rho and horizon J(rho)."""
    horizon = cfg.horizon(system, rho)
    centers = _centers(f_hat, cfg.n_centers, cfg.seed)
    hits = np.array([short_return_indicator(system, omega, float(x), rho, horizon) for x in centers])
    logger.debug(f"Short-return set at rho={rho}: J={horizon}, {int(hits.sum())} of {hits.size} centers")
    return SetEstimate.from_hits(hits)


def short_return_profile(system: MapSystem, omega: Realisation, rho: float, n_max: int, f_hat: DensityGrid,
                         n_centers: int, seed: int = 0) -> List[SetEstimate]:
    """Level-set estimates for n = 1..n_max sharing one center sample."""
    if n_max < 1:
        raise ShortReturnConfigError(f"n_max must be >= 1, got {n_max}")
    centers = _centers(f_hat, n_centers, seed)
    levels = np.array([return_levels(system, omega, float(x), rho, n_max) for x in centers])
    return [SetEstimate.from_hits(levels[:, n]) for n in range(n_max)]


@dataclass(frozen=True)
class ShortReturnFit:
    """
    Competing decay models for the short-return set measure.

    ``constant`` and ``rate`` belong to C exp(-c |log rho|^(1/2)); the power
    law is C' rho^s.
    """

    constant: float
    rate: float
    residual: float
    power_constant: float
    power_exponent: float
    power_residual: float
    n_points: int

    @property
    def preferred(self) -> str:
        return "sqrt-log" if self.residual <= self.power_residual else "power"

    def to_dict(self) -> dict:
        return {
            "C": self.constant,
            "c": self.rate,
            "residual": self.residual,
            "power_C": self.power_constant,
            "power_exponent": self.power_exponent,
            "power_residual": self.power_residual,
            "n_points": self.n_points,
            "preferred": self.preferred,
        }


def _least_squares(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    design = np.column_stack([np.ones_like(x), x])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.sum((design @ coef - y) ** 2))
    return float(coef[0]), float(coef[1]), residual


def fit_short_return_decay(rhos: Sequence[float], estimates: Sequence[float]) -> Optional[ShortReturnFit]:
    """
    Fit both decay models on log axes; zero estimates are dropped.

    Returns:
        The fit, or None with fewer than two positive estimates
    """
    rhos = np.asarray(rhos, dtype=float)
    values = np.asarray(estimates, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return None
    log_v = np.log(values[keep])
    log_c, slope, residual = _least_squares(np.sqrt(np.abs(np.log(rhos[keep]))), log_v)
    log_pc, exponent, power_residual = _least_squares(np.log(rhos[keep]), log_v)
    return ShortReturnFit(
        constant=math.exp(log_c),
        rate=-slope,
        residual=residual,
        power_constant=math.exp(log_pc),
        power_exponent=exponent,
        power_residual=power_residual,
        n_points=int(keep.sum()),
    )
