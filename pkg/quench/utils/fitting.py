"""
Regression helpers for decay profiles.

Profiles are fitted on log-log axes for polynomial decay and on semi-log axes
for exponential decay. Points at or below a numerical floor are dropped before
fitting.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

# Smallest value treated as signal in decay profiles
NUMERICAL_FLOOR = 1e-13

# Slope growth between the two halves of a range that marks super-polynomial decay
SUPERPOLY_GROWTH = 1.25


@dataclass(frozen=True)
class LineFit:
    """Least-squares line through transformed profile points."""

    slope: float
    intercept: float
    r_squared: float
    fit_range: Tuple[float, float]
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "fit_range": list(self.fit_range),
            "n_points": self.n_points,
        }


def _above_floor(x: Sequence[float], y: Sequence[float], floor: float):
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError(f"x and y must have the same shape, got {xs.shape} and {ys.shape}")
    keep = np.isfinite(ys) & (ys > floor)
    return xs[keep], ys[keep]


def _line(x: np.ndarray, y: np.ndarray) -> Optional[LineFit]:
    if x.size < 2 or np.ptp(x) == 0.0:
        return None
    result = stats.linregress(x, y)
    return LineFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=float(result.rvalue ** 2),
        fit_range=(float(x.min()), float(x.max())),
        n_points=int(x.size),
    )


def loglog_fit(x: Sequence[float], y: Sequence[float], floor: float = NUMERICAL_FLOOR) -> Optional[LineFit]:
    """
    Fit log y = intercept + slope * log x.

    Returns:
        The fit, or None when fewer than two usable points remain
    """
    xs, ys = _above_floor(x, y, floor)
    keep = xs > 0
    fit = _line(np.log(xs[keep]), np.log(ys[keep]))
    if fit is None:
        return None
    return LineFit(fit.slope, fit.intercept, fit.r_squared, (float(xs[keep].min()), float(xs[keep].max())), fit.n_points)


def semilog_fit(x: Sequence[float], y: Sequence[float], floor: float = NUMERICAL_FLOOR) -> Optional[LineFit]:
    """Fit log y = intercept + slope * x."""
    xs, ys = _above_floor(x, y, floor)
    return _line(xs, np.log(ys))


def is_superpolynomial(x: Sequence[float], y: Sequence[float], floor: float = NUMERICAL_FLOOR) -> bool:
    """
    Classify a decay profile as faster than any power law.

    The log-log slope is fitted separately on the lower and upper halves of
    the usable range; super-polynomial decay steepens. A profile that falls
    to the floor inside the range with fewer than four usable points also
    counts as super-polynomial.
    """
    xs, ys = _above_floor(x, y, floor)
    total = len(np.asarray(x))
    if xs.size < 4:
        return xs.size < total
    half = xs.size // 2
    lower = loglog_fit(xs[: half + 1], ys[: half + 1], floor)
    upper = loglog_fit(xs[half:], ys[half:], floor)
    if lower is None or upper is None:
        return False
    if lower.slope >= 0:
        return False
    return upper.slope < SUPERPOLY_GROWTH * lower.slope
