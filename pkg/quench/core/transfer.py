"""
Ulam discretisation of fiber transfer operators.

Densities live on a uniform partition of [0, 1] into m bins. Entry (i, j) of
an Ulam matrix is Leb(I_j intersected with T^-1 I_i) / Leb(I_j), computed from
exact inverse-branch preimages of the bin edges. Quenched densities are
obtained by pushing the uniform density forward from the past fibers
theta^-n w, ..., theta^-1 w.
"""
import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import nnls

from quench.core.driving import DrivingConfig, Realisation, sample_realisations
from quench.core.maps import FiberMap, MapSystem
from quench.utils.counter import counter_uniform

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
STREAM_PROBE = 0x50524F42
PROBE_MAX_JUMPS = 32


class DensityContractError(ValueError):
    """Raised when a density or operator violates its contract (bins, sign, mass, depth)."""
    pass


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """
    Piecewise-constant probability density on m uniform bins.

    ``convergence`` carries the L1 distance between pullback depths n and n/2
    when the density came from ``quenched_density``.
    """

    values: np.ndarray
    convergence: Optional[float] = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise DensityContractError(f"Density needs a 1-d array of at least 2 bins, got shape {arr.shape}")
        if (arr < 0).any():
            raise DensityContractError(f"Density has negative values (min {arr.min()})")
        mass = arr.sum() / arr.size
        if abs(mass - 1.0) > MASS_TOL:
            raise DensityContractError(f"Density mass must be 1, got {mass!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, bins: int) -> "DensityGrid":
        return cls(np.ones(bins))

    @classmethod
    def from_values(cls, values: np.ndarray, convergence: Optional[float] = None) -> "DensityGrid":
        """Normalise nonnegative values to unit mass."""
        arr = np.clip(np.asarray(values, dtype=float), 0.0, None)
        mass = arr.sum() / arr.size
        if mass <= 0:
            raise DensityContractError("Cannot normalise a density with zero mass")
        return cls(arr / mass, convergence)

    @property
    def bins(self) -> int:
        return int(self.values.size)

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.bins + 1) / self.bins

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) / self.bins

    @property
    def masses(self) -> np.ndarray:
        """Probability of each bin."""
        return self.values / self.bins

    @functools.cached_property
    def cdf_nodes(self) -> np.ndarray:
        """Cumulative mass at the bin edges, from exactly 0 to exactly 1."""
        nodes = np.concatenate([[0.0], np.cumsum(self.masses)])
        nodes[-1] = 1.0
        return np.maximum.accumulate(np.minimum(nodes, 1.0))

    def mass(self) -> float:
        return float(self.values.sum() / self.bins)

    def cdf(self, x):
        """Piecewise-linear distribution function."""
        out = np.interp(np.clip(np.asarray(x, dtype=float), 0.0, 1.0), self.edges, self.cdf_nodes)
        return float(out) if np.ndim(x) == 0 else out

    def integrate(self, g: np.ndarray) -> float:
        """Integral of a grid function against the density (midpoint values per bin)."""
        return float(np.dot(np.asarray(g, dtype=float), self.values) / self.bins)


def variation(values: np.ndarray, include_boundary: bool = False) -> float:
    """
    Discrete total variation of a piecewise-constant function on [0, 1].

    With ``include_boundary`` the jumps to zero outside [0, 1] are added.
    """
    arr = np.asarray(values, dtype=float)
    total = float(np.abs(np.diff(arr)).sum())
    if include_boundary:
        total += abs(arr[0]) + abs(arr[-1])
    return total


def l1_norm(values: np.ndarray) -> float:
    arr = np.asarray(values, dtype=float)
    return float(np.abs(arr).sum() / arr.size)


def l1_distance(f: DensityGrid, g: DensityGrid) -> float:
    _check_bins(f.bins, g.bins)
    return l1_norm(f.values - g.values)


def bv_norm(values: np.ndarray) -> float:
    """BV norm: variation plus L1 norm."""
    return variation(values) + l1_norm(values)


def _check_bins(expected: int, got: int) -> None:
    if expected != got:
        raise DensityContractError(f"Bin count mismatch: {expected} != {got}")


@dataclass(frozen=True, eq=False)
class UlamMatrix:
    """Column-stochastic sparse matrix P with P[i, j] = share of bin j's mass landing in bin i."""

    matrix: sparse.csr_matrix

    @property
    def bins(self) -> int:
        return int(self.matrix.shape[0])

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def push(self, values: np.ndarray) -> np.ndarray:
        """Push an arbitrary (possibly signed) grid function forward."""
        arr = np.asarray(values, dtype=float)
        _check_bins(self.bins, arr.size)
        return self.matrix @ arr

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@functools.lru_cache(maxsize=64)
def ulam_matrix(fmap: FiberMap, bins: int) -> UlamMatrix:
    """
    Ulam matrix of a fiber map on ``bins`` uniform bins.

    Each branch domain is cut at the preimages of the bin edges and at the bin
    edges themselves; every resulting segment carries its exact length from a
    source bin to a target bin.

    Raises:
        DensityContractError: If bins < 2
    """
    if bins < 2:
        raise DensityContractError(f"Ulam matrix needs at least 2 bins, got {bins}")
    edges = np.arange(bins + 1) / bins
    targets, sources, weights = [], [], []
    for branch in fmap.branches:
        pre = np.asarray(branch.inverse(edges), dtype=float)
        pre[0], pre[-1] = branch.lo, branch.hi
        pre = np.maximum.accumulate(np.clip(pre, branch.lo, branch.hi))
        inner = edges[(edges > branch.lo) & (edges < branch.hi)]
        points = np.union1d(pre, inner)
        seg_lo, seg_hi = points[:-1], points[1:]
        length = seg_hi - seg_lo
        keep = length > 0
        mid = 0.5 * (seg_lo[keep] + seg_hi[keep])
        targets.append(np.clip(np.searchsorted(pre, mid, side="right") - 1, 0, bins - 1))
        sources.append(np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, bins - 1))
        weights.append(length[keep] * bins)
    matrix = sparse.coo_matrix(
        (np.concatenate(weights), (np.concatenate(targets), np.concatenate(sources))),
        shape=(bins, bins),
    ).tocsr()
    matrix.sum_duplicates()
    logger.debug(f"Built Ulam matrix for {fmap.label} on {bins} bins ({matrix.nnz} nonzeros)")
    return UlamMatrix(matrix)


def push_density(P: UlamMatrix, f: DensityGrid) -> DensityGrid:
    """
    Push a density forward through one Ulam matrix.

    Raises:
        DensityContractError: On a bin count mismatch
    """
    _check_bins(P.bins, f.bins)
    return DensityGrid.from_values(P.push(f.values))


def _pull_back_values(system: MapSystem, omega: Realisation, depth: int, bins: int) -> np.ndarray:
    values = np.ones(bins)
    for symbol in omega.symbols(-depth, 0):
        values = ulam_matrix(system[symbol], bins).push(values)
        values /= values.sum() / bins
    return values


def quenched_density(system: MapSystem, omega: Realisation, n_pull: int, bins: int) -> DensityGrid:
    """
    Estimate h_w by pushing the uniform density forward from fiber theta^-n_pull w.

    The returned grid's ``convergence`` is the L1 distance to the same
    construction at depth n_pull // 2.

    Raises:
        DensityContractError: If n_pull < 1
    """
    if n_pull < 1:
        raise DensityContractError(f"Pullback depth must be >= 1, got {n_pull}")
    full = _pull_back_values(system, omega, n_pull, bins)
    half = _pull_back_values(system, omega, max(1, n_pull // 2), bins)
    convergence = l1_norm(full - half)
    logger.debug(f"Quenched density at offset {omega.offset}: depth {n_pull}, convergence {convergence:.3e}")
    return DensityGrid.from_values(full, convergence=convergence)


def fiber_densities(system: MapSystem, omega: Realisation, h_omega: DensityGrid, n: int) -> Iterator[DensityGrid]:
    """Yield h_w, h_{theta w}, ..., h_{theta^n w} by forward pushes."""
    yield h_omega
    values = h_omega.values
    for symbol in omega.symbols(0, n):
        values = ulam_matrix(system[symbol], h_omega.bins).push(values)
        yield DensityGrid.from_values(values)


def marginal_density(system: MapSystem, config: DrivingConfig, n_omega: int, n_pull: int, bins: int,
                     threads: int = 1) -> DensityGrid:
    """Average of quenched densities over ``n_omega`` sampled realisations, summed in replicate order."""
    realisations = sample_realisations(config, n_omega)
    build = functools.partial(quenched_density, system, n_pull=n_pull, bins=bins)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            densities = list(pool.map(build, realisations))
    else:
        densities = [build(omega) for omega in realisations]
    total = np.zeros(bins)
    for density in densities:
        total += density.values
    worst = max(d.convergence or 0.0 for d in densities)
    return DensityGrid.from_values(total / n_omega, convergence=worst)


def invariance_residual(system: MapSystem, omega: Realisation, bins: int, n_pull: int) -> float:
    """L1 distance between L_w h_w and h_{theta w}."""
    h = quenched_density(system, omega, n_pull, bins)
    h_next = quenched_density(system, omega.shift(1), n_pull, bins)
    pushed = push_density(ulam_matrix(system[omega.symbol_at(0)], bins), h)
    return l1_distance(pushed, h_next)


@dataclass(frozen=True)
class DoeblinFortetFit:
    """Least-squares fit of var(L^n psi) <= eta var(psi) + C ||psi||_1 over random test densities."""

    eta: float
    constant: float
    violation_fraction: float
    trials: int
    depth: int
    max_bv_ratio: float

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "constant": self.constant,
            "violation_fraction": self.violation_fraction,
            "trials": self.trials,
            "depth": self.depth,
            "max_bv_ratio": self.max_bv_ratio,
        }


def _probe_density(bins: int, seed: int, trial: int) -> np.ndarray:
    # Piecewise-constant positive function with a random number of jumps
    n_jumps = 1 + int(counter_uniform(seed, STREAM_PROBE, trial, 0) * PROBE_MAX_JUMPS)
    cuts = np.sort((counter_uniform(seed, STREAM_PROBE, trial, 1 + np.arange(n_jumps)) * bins).astype(int))
    levels = 2.0 * counter_uniform(seed, STREAM_PROBE, trial, 1000 + np.arange(n_jumps + 1))
    index = np.searchsorted(cuts, np.arange(bins), side="right")
    return levels[index]


def doeblin_fortet_probe(system: MapSystem, omega: Realisation, n: int, trials: int,
                         bins: int = 2 ** 12, seed: int = 0) -> DoeblinFortetFit:
    """
    Fit the Doeblin-Fortet inequality for L^n_w on random test densities.

    Raises:
        DensityContractError: If trials < 1 or n < 1
    """
    if trials < 1 or n < 1:
        raise DensityContractError(f"Probe needs trials >= 1 and n >= 1, got {trials} and {n}")
    matrices = [ulam_matrix(system[s], bins) for s in omega.symbols(0, n)]
    var_in = np.empty(trials)
    norm_in = np.empty(trials)
    var_out = np.empty(trials)
    bv_ratio = np.empty(trials)
    for trial in range(trials):
        psi = _probe_density(bins, seed, trial)
        out = psi
        for matrix in matrices:
            out = matrix.push(out)
        var_in[trial] = variation(psi)
        norm_in[trial] = l1_norm(psi)
        var_out[trial] = variation(out)
        bv_ratio[trial] = bv_norm(out) / bv_norm(psi)
    (eta, constant), _ = nnls(np.column_stack([var_in, norm_in]), var_out)
    bound = eta * var_in + constant * norm_in
    violations = float(np.mean(var_out > bound + 1e-12 * np.maximum(bound, 1.0)))
    return DoeblinFortetFit(float(eta), float(constant), violations, trials, n, float(bv_ratio.max()))
