"""
Hitting and return time statistics for a fixed driving realisation.

The Monte Carlo engine iterates blocks of starting points in lockstep along
the fibers w, theta w, theta^2 w, ... and records first entry times into a
ball. Integer-slope maps drain one mantissa bit per doubling in binary
floating point, so the engine perturbs every orbit by a counter-keyed
amount of size ``roundoff_refresh`` after each step. Scalar helpers such as
``hitting_time`` evaluate exact float orbits without refresh.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from quench.core.driving import DrivingConfig, Realisation, sample_realisations
from quench.core.maps import MapSystem
from quench.core.measures import Ball, ball_measure, conditional_quantile, inverse_cdf
from quench.core.transfer import DensityGrid, quenched_density, ulam_matrix
from quench.utils.counter import counter_uniform
from quench.utils.fitting import LineFit, is_superpolynomial, loglog_fit, semilog_fit

logger = logging.getLogger(__name__)

STREAM_START = 0x53544152
STREAM_REFRESH = 0x52454652
STREAM_MIXING = 0x4D495847
DEFAULT_REFRESH = 2.0 ** -48
BELOW_ONE = 1.0 - 2.0 ** -53

GridFunction = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


class LawConfigError(ValueError):
    """Raised for invalid law configuration (t-grid, sample counts, truncation)."""
    pass


class LawDomainError(ValueError):
    """Raised when a ball has zero mass where a positive mass is required."""
    pass


@dataclass(frozen=True)
class Censored:
    """Orbit truncated at ``max_iter`` steps without entering the ball."""

    max_iter: int


def default_t_grid() -> Tuple[float, ...]:
    return tuple(float(t) for t in np.linspace(0.1, 5.0, 50))


@dataclass(frozen=True)
class LawConfig:
    """Sampling budget for hitting and return laws."""

    t_grid: Tuple[float, ...] = field(default_factory=default_t_grid)
    n_samples: int = 5000
    max_iter_factor: float = 4.0
    seed: int = 0
    roundoff_refresh: float = DEFAULT_REFRESH
    threads: int = 1
    block_size: int = 1024

    def __post_init__(self):
        grid = tuple(float(t) for t in self.t_grid)
        object.__setattr__(self, "t_grid", grid)
        if not grid:
            raise LawConfigError("t-grid must not be empty")
        if grid[0] <= 0:
            raise LawConfigError(f"t-grid must start above 0, got {grid[0]}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise LawConfigError("t-grid must be strictly increasing")
        if self.n_samples < 1:
            raise LawConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.max_iter_factor < 2:
            raise LawConfigError(f"max_iter_factor must be >= 2, got {self.max_iter_factor}")
        if self.roundoff_refresh < 0:
            raise LawConfigError(f"roundoff_refresh must be >= 0, got {self.roundoff_refresh}")
        if self.threads < 1 or self.block_size < 1:
            raise LawConfigError("threads and block_size must be >= 1")

    def horizons(self, mu_ball: float) -> np.ndarray:
        """N(t) = floor(t / mu(B)) for every grid point."""
        return np.floor(np.asarray(self.t_grid) / mu_ball).astype(np.int64)

    def max_iter(self, mu_ball: float) -> int:
        return max(1, int(math.ceil(self.max_iter_factor * self.horizons(mu_ball)[-1])))


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    """
    Tabulated survival function F(t) = P(tau > N(t)).

    ``times`` holds every sample's first entry time; censored samples hold
    ``max_iter + 1``.
    """

    t_grid: np.ndarray
    survival: np.ndarray
    n_eff: np.ndarray
    censored: int
    n_samples: int
    horizons: np.ndarray
    mu_ball: float
    max_iter: int
    times: np.ndarray

    @property
    def exponential(self) -> np.ndarray:
        return np.exp(-self.t_grid)

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n_samples if self.n_samples else 0.0


def _refresh(x: np.ndarray, seed: int, ids: np.ndarray, step: int, size: float) -> np.ndarray:
    noise = size * (counter_uniform(seed, STREAM_REFRESH, ids, step) - 0.5)
    x = np.abs(x + noise)
    x = np.where(x >= 1.0, 2.0 - x, x)
    return np.minimum(x, BELOW_ONE)


def orbit_hitting_times(system: MapSystem, omega: Realisation, starts: np.ndarray, ball: Ball, max_iter: int,
                        refresh: float = 0.0, seed: int = 0, first_id: int = 0,
                        symbols: Optional[np.ndarray] = None) -> np.ndarray:
    """
    First entry times into ``ball`` for a batch of starting points.

    Args:
        system: Map system
        omega: Driving realisation; step j applies the map of symbol w_{j-1}
        starts: Starting points
        ball: Target ball
        max_iter: Truncation horizon
        refresh: Size of the per-step round-off perturbation, 0 disables it
        seed: Seed of the perturbation stream
        first_id: Global index of starts[0], keys the perturbation stream
        symbols: Precomputed symbols w_0..w_{max_iter-1}

    Returns:
        int64 array of times in [1, max_iter], or max_iter + 1 when censored
    """
    if symbols is None:
        symbols = omega.symbols(0, max_iter)
    x = np.array(starts, dtype=float)
    times = np.full(x.size, max_iter + 1, dtype=np.int64)
    position = np.arange(x.size)
    ids = first_id + position
    for j in range(1, max_iter + 1):
        if position.size == 0:
            break
        x = system[symbols[j - 1]].apply(x)
        if refresh > 0:
            x = _refresh(x, seed, ids, j, refresh)
        hit = ball.contains(x)
        if hit.any():
            times[position[hit]] = j
            keep = ~hit
            x, position, ids = x[keep], position[keep], ids[keep]
    return times


def blocked_hitting_times(system: MapSystem, omega: Realisation, starts: np.ndarray, ball: Ball, max_iter: int,
                          cfg: LawConfig) -> np.ndarray:
    """Run ``orbit_hitting_times`` over fixed-size blocks, concatenated in block order."""
    starts = np.asarray(starts, dtype=float)
    symbols = omega.symbols(0, max_iter)

    def run(first: int) -> np.ndarray:
        stop = min(first + cfg.block_size, starts.size)
        logger.debug(f"Hitting-time block {first}:{stop}")
        return orbit_hitting_times(system, omega, starts[first:stop], ball, max_iter,
                                   refresh=cfg.roundoff_refresh, seed=cfg.seed,
                                   first_id=first, symbols=symbols)

    firsts = range(0, starts.size, cfg.block_size)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            blocks = list(pool.map(run, firsts))
    else:
        blocks = [run(first) for first in firsts]
    return np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64)


def hitting_time(system: MapSystem, omega: Realisation, x: float, ball: Ball, max_iter: int) -> Union[int, Censored]:
    """
    tau(x) = least j in [1, max_iter] with T^j_w x in the ball, on the exact float orbit.

    Raises:
        LawConfigError: If max_iter < 1
    """
    if max_iter < 1:
        raise LawConfigError(f"max_iter must be >= 1, got {max_iter}")
    for j, symbol in enumerate(omega.symbols(0, max_iter), start=1):
        x = system[symbol].apply(x)
        if ball.contains(x):
            return j
    return Censored(max_iter)


def _law_from_starts(system: MapSystem, omega: Realisation, ball: Ball, mu_ball: float, starts: np.ndarray,
                     cfg: LawConfig) -> EmpiricalLaw:
    max_iter = cfg.max_iter(mu_ball)
    horizons = cfg.horizons(mu_ball)
    times = blocked_hitting_times(system, omega, starts, ball, max_iter, cfg)
    survival = (times[None, :] > horizons[:, None]).mean(axis=1)
    censored = int((times > max_iter).sum())
    if censored:
        logger.warning(f"{censored} of {times.size} orbits censored at {max_iter} steps")
    return EmpiricalLaw(
        t_grid=np.asarray(cfg.t_grid),
        survival=survival,
        n_eff=np.full(horizons.size, times.size, dtype=np.int64),
        censored=censored,
        n_samples=int(times.size),
        horizons=horizons,
        mu_ball=float(mu_ball),
        max_iter=max_iter,
        times=times,
    )


def _start_uniforms(cfg: LawConfig) -> np.ndarray:
    return counter_uniform(cfg.seed, STREAM_START, np.arange(cfg.n_samples, dtype=np.int64))


def _check_scale(mu_ball: float) -> None:
    if not mu_ball > 0:
        raise LawDomainError(f"Marginal ball mass must be positive, got {mu_ball}")


def hitting_law(system: MapSystem, omega: Realisation, ball: Ball, mu_ball: float, f_omega: DensityGrid,
                cfg: LawConfig) -> EmpiricalLaw:
    """
    Survival function of the rescaled hitting time for starting points drawn from f_omega.

    Args:
        mu_ball: Marginal mass of the ball, the rescaling constant
        f_omega: Quenched density used for sampling

    Raises:
        LawDomainError: If mu_ball is not positive
    """
    _check_scale(mu_ball)
    starts = inverse_cdf(f_omega, _start_uniforms(cfg))
    return _law_from_starts(system, omega, ball, mu_ball, np.atleast_1d(starts), cfg)


def _conditional_starts(f_omega: DensityGrid, ball: Ball, cfg: LawConfig) -> np.ndarray:
    if ball_measure(f_omega, ball) <= 0:
        raise LawDomainError(f"Ball B_{ball.radius}({ball.center}) has zero quenched mass")
    return np.atleast_1d(conditional_quantile(f_omega, ball, _start_uniforms(cfg)))


def return_law(system: MapSystem, omega: Realisation, ball: Ball, mu_ball: float, f_omega: DensityGrid,
               cfg: LawConfig) -> EmpiricalLaw:
    """As ``hitting_law`` with starting points conditioned on the ball."""
    _check_scale(mu_ball)
    return _law_from_starts(system, omega, ball, mu_ball, _conditional_starts(f_omega, ball, cfg), cfg)


def annealed_law(laws: Sequence[EmpiricalLaw]) -> EmpiricalLaw:
    """Average quenched laws sharing a t-grid into the annealed survival function."""
    if not laws:
        raise LawConfigError("Annealed law needs at least one quenched law")
    grid = laws[0].t_grid
    for law in laws[1:]:
        if law.t_grid.shape != grid.shape or not np.array_equal(law.t_grid, grid):
            raise LawConfigError("Annealed averaging needs a shared t-grid")
    return EmpiricalLaw(
        t_grid=grid,
        survival=np.mean([law.survival for law in laws], axis=0),
        n_eff=np.sum([law.n_eff for law in laws], axis=0),
        censored=sum(law.censored for law in laws),
        n_samples=sum(law.n_samples for law in laws),
        horizons=laws[0].horizons,
        mu_ball=laws[0].mu_ball,
        max_iter=max(law.max_iter for law in laws),
        times=np.concatenate([law.times for law in laws]),
    )


def ks_to_exponential(law: EmpiricalLaw) -> float:
    """sup over the t-grid of |F(t) - exp(-t)|, plus the censored fraction."""
    return float(np.max(np.abs(law.survival - law.exponential))) + law.censored_fraction


def _interval_mass_of_values(values: np.ndarray, lo: float, hi: float) -> float:
    bins = values.size
    nodes = np.concatenate([[0.0], np.cumsum(values)]) / values.sum()
    edges = np.arange(bins + 1) / bins
    return float(np.interp(hi, edges, nodes) - np.interp(lo, edges, nodes))


def fiber_ball_masses(system: MapSystem, omega: Realisation, ball: Ball, h_omega: DensityGrid, n: int) -> np.ndarray:
    """mu^{theta^j w}(B) for j = 1..n, pushing h_omega forward one fiber at a time."""
    masses = np.empty(n)
    values = np.array(h_omega.values)
    for j, symbol in enumerate(omega.symbols(0, n)):
        values = ulam_matrix(system[symbol], h_omega.bins).push(values)
        masses[j] = _interval_mass_of_values(values, ball.lo, ball.hi)
    return masses


def product_from_masses(masses: Sequence[float], horizons: Sequence[int]) -> np.ndarray:
    """prod_{j <= N} (1 - m_j) for every N in ``horizons``."""
    running = np.concatenate([[1.0], np.cumprod(1.0 - np.asarray(masses, dtype=float))])
    return running[np.asarray(horizons, dtype=np.int64)]


def product_law(system: MapSystem, omega: Realisation, ball: Ball, h_omega: DensityGrid, n: int) -> float:
    """
    prod_{j=1}^{n} (1 - mu^{theta^j w}(B)); 1 for n = 0.

    Raises:
        LawConfigError: If n < 0
    """
    if n < 0:
        raise LawConfigError(f"Product length must be >= 0, got {n}")
    if n == 0:
        return 1.0
    return float(product_from_masses(fiber_ball_masses(system, omega, ball, h_omega, n), [n])[0])


def product_law_curve(system: MapSystem, omega: Realisation, ball: Ball, h_omega: DensityGrid,
                      horizons: Sequence[int]) -> np.ndarray:
    """Product law at every horizon, sharing one pass of fiber pushes."""
    horizons = np.asarray(horizons, dtype=np.int64)
    masses = fiber_ball_masses(system, omega, ball, h_omega, int(horizons.max()) if horizons.size else 0)
    return product_from_masses(masses, horizons)


def orbit_memberships(system: MapSystem, omega: Realisation, ball: Ball, y, length: int,
                      refresh: float = 0.0, seed: int = 0) -> np.ndarray:
    """Boolean array with entry [i, n] telling whether T^n_w y_i lies in the ball, n = 0..length-1."""
    x = np.atleast_1d(np.array(y, dtype=float))
    inside = np.zeros((x.size, length), dtype=bool)
    ids = np.arange(x.size)
    for n, symbol in enumerate(omega.symbols(0, length)):
        inside[:, n] = ball.contains(x)
        x = system[symbol].apply(x)
        if refresh > 0:
            x = _refresh(x, seed, ids, n + 1, refresh)
    return inside


def _horizon(t: float, mu_ball: float) -> int:
    if not mu_ball > 0:
        raise LawDomainError(f"Marginal ball mass must be positive, got {mu_ball}")
    return int(math.floor(t / mu_ball))


def counting_z_many(system: MapSystem, omega: Realisation, x_center: float, rho: float, t: float, mu_ball: float,
                    y, refresh: float = 0.0, seed: int = 0) -> np.ndarray:
    """Visit counts Z = #{0 <= n < N : T^n_w y in B_rho(x)} for an array of starting points."""
    n_steps = _horizon(t, mu_ball)
    ball = Ball(x_center, rho)
    if n_steps == 0:
        return np.zeros(np.atleast_1d(y).size, dtype=np.int64)
    return orbit_memberships(system, omega, ball, y, n_steps, refresh, seed).sum(axis=1)


def counting_z(system: MapSystem, omega: Realisation, x_center: float, rho: float, t: float, mu_ball: float,
               y: float) -> int:
    return int(counting_z_many(system, omega, x_center, rho, t, mu_ball, [y])[0])


def counting_y_many(system: MapSystem, omega: Realisation, x_center: float, rho: float, t: float, mu_ball: float,
                    window: int, y, refresh: float = 0.0, seed: int = 0) -> np.ndarray:
    """
    Very short return counts: visits at times j in [0, N - 1] followed by another
    visit within the next ``window`` - 1 steps along the shifted fibers.

    Every counted visit is also counted by ``counting_z_many``, so Y <= Z.

    Raises:
        LawConfigError: If window < 1
    """
    if window < 1:
        raise LawConfigError(f"Return window must be >= 1, got {window}")
    n_steps = _horizon(t, mu_ball)
    count = np.atleast_1d(y).size
    if n_steps == 0 or window == 1:
        return np.zeros(count, dtype=np.int64)
    inside = orbit_memberships(system, omega, Ball(x_center, rho), y, n_steps + window, refresh, seed)
    running = np.concatenate([np.zeros((count, 1), dtype=np.int64), np.cumsum(inside, axis=1)], axis=1)
    j = np.arange(n_steps)
    # visits at j + 1 .. j + window - 1
    follow_up = running[:, j + window] - running[:, j + 1]
    return (inside[:, j] & (follow_up > 0)).sum(axis=1)


def counting_y(system: MapSystem, omega: Realisation, x_center: float, rho: float, t: float, mu_ball: float,
               window: int, y: float) -> int:
    return int(counting_y_many(system, omega, x_center, rho, t, mu_ball, window, [y])[0])


@dataclass(frozen=True)
class KacResult:
    """Mean return time times the marginal ball mass."""

    ratio: float
    mean_return: float
    censored: int
    lower_bound: bool


def kac_check(system: MapSystem, omega: Realisation, ball: Ball, mu_ball: float, f_omega: DensityGrid,
              cfg: LawConfig) -> KacResult:
    """
    Kac normalisation check on conditional samples.

    Censored orbits count with their truncation horizon, turning the
    estimate into a lower bound; the result is flagged accordingly.
    """
    _check_scale(mu_ball)
    max_iter = cfg.max_iter(mu_ball)
    times = blocked_hitting_times(system, omega, _conditional_starts(f_omega, ball, cfg), ball, max_iter, cfg)
    censored = int((times > max_iter).sum())
    if censored:
        logger.warning(f"Kac check: {censored} censored orbits, ratio is a lower bound")
    mean = float(np.minimum(times, max_iter).mean())
    return KacResult(mean * mu_ball, mean, censored, censored > 0)


def mixing_gap(system: MapSystem, omega: Realisation, ball: Ball, f_omega: DensityGrid, k_max: int,
               n_samples: int, seed: int = 0, refresh: float = DEFAULT_REFRESH) -> float:
    """
    max over 1 <= k <= k_max of |P(tau > k) P(B) - P(B and tau > k)| under f_omega.

    Both probabilities come from one sample set.
    """
    if k_max < 1:
        raise LawConfigError(f"k_max must be >= 1, got {k_max}")
    u = counter_uniform(seed, STREAM_MIXING, np.arange(n_samples, dtype=np.int64))
    y = np.atleast_1d(inverse_cdf(f_omega, u))
    times = orbit_hitting_times(system, omega, y, ball, k_max, refresh=refresh, seed=seed)
    in_ball = ball.contains(y)
    p_ball = in_ball.mean()
    gap = 0.0
    for k in range(1, k_max + 1):
        survive = times > k
        gap = max(gap, abs(survive.mean() * p_ball - (in_ball & survive).mean()))
    return float(gap)


def centered_tent(x):
    """Lipschitz test function 1 - |2x - 1| minus its Lebesgue mean."""
    return 1.0 - np.abs(2.0 * np.asarray(x, dtype=float) - 1.0) - 0.5


@dataclass(frozen=True, eq=False)
class CorrelationProfile:
    """Correlation decay estimates lambda(k) on a lag grid."""

    lags: np.ndarray
    values: np.ndarray
    annealed: bool

    def loglog(self) -> Optional[LineFit]:
        return loglog_fit(self.lags, self.values)

    def semilog(self) -> Optional[LineFit]:
        return semilog_fit(self.lags, self.values)

    @property
    def superpolynomial(self) -> bool:
        return is_superpolynomial(self.lags, self.values)


def _grid_values(fn: GridFunction, bins: int) -> np.ndarray:
    if callable(fn):
        return np.broadcast_to(np.asarray(fn((np.arange(bins) + 0.5) / bins), dtype=float), (bins,)).copy()
    values = np.asarray(fn, dtype=float)
    if values.shape != (bins,):
        raise LawConfigError(f"Grid function must have {bins} values, got shape {values.shape}")
    return values


def _fiber_correlations(system: MapSystem, omega: Realisation, g: np.ndarray, h_test: np.ndarray,
                        lags: np.ndarray, n_pull: int, bins: int):
    density = quenched_density(system, omega, n_pull, bins).values
    weighted = g * density
    mu_g = float(np.dot(g, density) / bins)
    cross = np.empty(lags.size)
    mu_h = np.empty(lags.size)
    wanted = {int(k): i for i, k in enumerate(lags)}
    pushed_gh, pushed_h = weighted, density
    if 0 in wanted:
        cross[wanted[0]] = np.dot(h_test, pushed_gh) / bins
        mu_h[wanted[0]] = np.dot(h_test, pushed_h) / bins
    for step, symbol in enumerate(omega.symbols(0, int(lags.max())), start=1):
        matrix = ulam_matrix(system[symbol], bins)
        pushed_gh = matrix.push(pushed_gh)
        pushed_h = matrix.push(pushed_h)
        if step in wanted:
            cross[wanted[step]] = np.dot(h_test, pushed_gh) / bins
            mu_h[wanted[step]] = np.dot(h_test, pushed_h) / bins
    return cross, mu_g, mu_h


def correlation_decay(system: MapSystem, config: DrivingConfig, g: GridFunction, h: GridFunction,
                      lags: Sequence[int], n_omega: int, bins: int, n_pull: int,
                      annealed: bool = False, threads: int = 1) -> CorrelationProfile:
    """
    Estimate correlation decay lambda(k) = |int G (H o T^k) dmu - mu(G) mu(H)|.

    H o T^k is integrated by pushing G h_w forward k fibers. The quenched
    variant averages the per-realisation decay over ``n_omega`` realisations;
    the annealed variant averages the correlations first.
    """
    lags = np.asarray(lags, dtype=np.int64)
    if lags.size == 0 or (lags < 0).any() or (np.diff(lags) <= 0).any():
        raise LawConfigError("Lag grid must be nonnegative and strictly increasing")
    g_values = _grid_values(g, bins)
    h_values = _grid_values(h, bins)
    realisations = sample_realisations(config, n_omega)

    def run(omega: Realisation):
        return _fiber_correlations(system, omega, g_values, h_values, lags, n_pull, bins)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, realisations))
    else:
        results = [run(omega) for omega in realisations]
    if annealed:
        cross = np.mean([r[0] for r in results], axis=0)
        mu_g = np.mean([r[1] for r in results])
        mu_h = np.mean([r[2] for r in results], axis=0)
        values = np.abs(cross - mu_g * mu_h)
    else:
        values = np.mean([np.abs(r[0] - r[1] * r[2]) for r in results], axis=0)
    return CorrelationProfile(lags, values, annealed)
