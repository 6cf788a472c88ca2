"""
Piecewise-monotone interval maps and their random compositions.

A FiberMap is a full-branch map of [0, 1) assembled from affine and
Pomeau-Manneville branches. A MapSystem assigns one FiberMap to each driving
symbol, and compositions follow T^n_w = T_{theta^{n-1} w} o ... o T_w.

Cylinder diagnostics refine the partition of [0, 1) into n-cylinders by
pulling branch breakpoints back through the inverse branches of the word that
defines each cell.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from quench.core.driving import Realisation
from quench.utils.fitting import LineFit, loglog_fit
from quench.utils.intervals import IntervalUnion

logger = logging.getLogger(__name__)

DEFAULT_CELL_CAP = 2 ** 22
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
CHEBYSHEV_POINTS = 8
CONSTRUCTION_TOL = 1e-12

ArrayLike = Union[float, np.ndarray]


class MapDomainError(ValueError):
    """Raised when a point lies outside a branch image or map parameters are invalid."""
    pass


class CylinderCapError(RuntimeError):
    """Raised when a cylinder refinement would exceed the configured cell cap."""
    pass


class BranchKind(str, Enum):
    AFFINE = "affine"
    PM_LEFT = "pm-left"
    PM_RIGHT = "pm-right"


def _restore(x_in: ArrayLike, out: np.ndarray) -> ArrayLike:
    return float(out) if np.ndim(x_in) == 0 else out


@dataclass(frozen=True)
class Branch:
    """
    One monotone increasing branch on the half-open domain [lo, hi).

    Affine branches evaluate slope * x + intercept. The Pomeau-Manneville left
    branch is x + c * x^(1 + alpha) with c = 2^alpha, or c = 2^(1 + alpha)
    clamped to 1 when ``paper_coefficient`` is set. The right branch is 2x - 1.
    """

    lo: float
    hi: float
    kind: BranchKind = BranchKind.AFFINE
    slope: float = 1.0
    intercept: float = 0.0
    alpha: float = 0.0
    paper_coefficient: bool = False

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise MapDomainError(f"Branch domain [{self.lo}, {self.hi}) is not a subinterval of [0, 1)")
        if self.kind == BranchKind.AFFINE and self.slope < 1.0:
            raise MapDomainError(f"Affine branch slope must be >= 1, got {self.slope}")
        if self.kind == BranchKind.PM_LEFT and not (0.0 < self.alpha < 1.0):
            raise MapDomainError(f"Pomeau-Manneville exponent must lie in (0, 1), got {self.alpha}")

    @property
    def coefficient(self) -> float:
        """Coefficient c of the neutral branch x + c x^(1 + alpha)."""
        exponent = 1.0 + self.alpha if self.paper_coefficient else self.alpha
        return 2.0 ** exponent

    def apply(self, x: ArrayLike) -> ArrayLike:
        arr = np.asarray(x, dtype=float)
        if self.kind == BranchKind.AFFINE:
            out = self.slope * arr + self.intercept
        elif self.kind == BranchKind.PM_RIGHT:
            out = 2.0 * arr - 1.0
        else:
            out = arr + self.coefficient * np.power(arr, 1.0 + self.alpha)
            if self.paper_coefficient:
                out = np.minimum(out, 1.0)
        return _restore(x, out)

    def derivative(self, x: ArrayLike) -> ArrayLike:
        arr = np.asarray(x, dtype=float)
        if self.kind == BranchKind.AFFINE:
            out = np.full(arr.shape, float(self.slope))
        elif self.kind == BranchKind.PM_RIGHT:
            out = np.full(arr.shape, 2.0)
        else:
            out = 1.0 + (1.0 + self.alpha) * self.coefficient * np.power(arr, self.alpha)
        return _restore(x, out)

    @property
    def image(self) -> Tuple[float, float]:
        """Closure of the branch image."""
        return float(self.apply(self.lo)), float(self.apply(self.hi))

    def derivative_bounds(self) -> Tuple[float, float]:
        """(inf, sup) of the derivative over the closed domain."""
        lo_d = float(self.derivative(self.lo))
        hi_d = float(self.derivative(self.hi))
        return min(lo_d, hi_d), max(lo_d, hi_d)

    def inverse(self, y: ArrayLike) -> ArrayLike:
        """
        Solve apply(x) = y for x in the closed domain.

        Raises:
            MapDomainError: If any y lies outside the closure of the image
        """
        arr = np.asarray(y, dtype=float)
        img_lo, img_hi = self.image
        if arr.size and (arr.min() < img_lo - CONSTRUCTION_TOL or arr.max() > img_hi + CONSTRUCTION_TOL):
            raise MapDomainError(
                f"Value outside branch image [{img_lo}, {img_hi}]: "
                f"range [{float(arr.min())}, {float(arr.max())}]"
            )
        arr = np.clip(arr, img_lo, img_hi)
        if self.kind == BranchKind.AFFINE:
            out = (arr - self.intercept) / self.slope
        elif self.kind == BranchKind.PM_RIGHT:
            out = (arr + 1.0) / 2.0
        else:
            out = self._neutral_inverse(np.atleast_1d(arr)).reshape(arr.shape)
        return _restore(y, np.clip(out, self.lo, self.hi))

    def _neutral_inverse(self, y: np.ndarray) -> np.ndarray:
        # Bracketed Newton on g(x) = x + c x^(1+a) - y, root in [0, min(y, hi)]
        c = self.coefficient
        a = self.alpha
        lo = np.zeros_like(y)
        hi = np.minimum(y, self.hi)
        x = np.clip(y / 2.0, lo, hi)
        for _ in range(NEWTON_MAX_ITER):
            g = x + c * np.power(x, 1.0 + a) - y
            lo = np.where(g < 0.0, x, lo)
            hi = np.where(g > 0.0, x, hi)
            step = g / (1.0 + (1.0 + a) * c * np.power(x, a))
            candidate = x - step
            outside = (candidate < lo) | (candidate > hi)
            candidate = np.where(outside, 0.5 * (lo + hi), candidate)
            converged = (np.abs(g) <= NEWTON_TOL * 1e-3) | (np.abs(candidate - x) <= 4e-16 * np.maximum(x, 1e-300))
            x = candidate
            if converged.all():
                break
        return x


@dataclass(frozen=True)
class FiberMap:
    """A full-branch piecewise-monotone map of [0, 1)."""

    branches: Tuple[Branch, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise MapDomainError("A fiber map needs at least one branch")
        if self.branches[0].lo != 0.0 or self.branches[-1].hi != 1.0:
            raise MapDomainError("Branch domains must cover [0, 1)")
        for left, right in zip(self.branches, self.branches[1:]):
            if left.hi != right.lo:
                raise MapDomainError(f"Branch domains must be contiguous, gap at {left.hi} / {right.lo}")
        for branch in self.branches:
            img_lo, img_hi = branch.image
            if abs(img_lo) > CONSTRUCTION_TOL or abs(img_hi - 1.0) > CONSTRUCTION_TOL:
                raise MapDomainError(
                    f"Branch on [{branch.lo}, {branch.hi}) is not full: image [{img_lo}, {img_hi}]"
                )

    @classmethod
    def linear(cls, slope: int, label: Optional[str] = None) -> "FiberMap":
        """The map x -> slope * x mod 1."""
        if int(slope) != slope or slope < 1:
            raise MapDomainError(f"Linear maps need a positive integer slope, got {slope}")
        k = int(slope)
        edges = [i / k for i in range(k)] + [1.0]
        branches = tuple(
            Branch(edges[i], edges[i + 1], BranchKind.AFFINE, slope=float(k), intercept=-float(i))
            for i in range(k)
        )
        return cls(branches, label or f"{k}x mod 1")

    @classmethod
    def identity(cls) -> "FiberMap":
        return cls.linear(1, label="identity")

    @classmethod
    def pomeau_manneville(cls, alpha: float, paper_coefficient: bool = False,
                          label: Optional[str] = None) -> "FiberMap":
        """Pomeau-Manneville map with neutral fixed point at 0 and exponent alpha."""
        left = Branch(0.0, 0.5, BranchKind.PM_LEFT, alpha=float(alpha), paper_coefficient=paper_coefficient)
        right = Branch(0.5, 1.0, BranchKind.PM_RIGHT, slope=2.0, intercept=-1.0)
        return cls((left, right), label or f"pm(alpha={alpha})")

    @property
    def edges(self) -> np.ndarray:
        """Branch domain endpoints, length len(branches) + 1."""
        return np.array([b.lo for b in self.branches] + [1.0])

    @property
    def is_affine(self) -> bool:
        return all(b.kind != BranchKind.PM_LEFT for b in self.branches)

    def branch_index(self, x: ArrayLike) -> np.ndarray:
        """Index of the branch whose half-open domain holds x; x = 1 maps to the last branch."""
        idx = np.searchsorted(self.edges[1:-1], np.asarray(x, dtype=float), side="right")
        return np.minimum(idx, len(self.branches) - 1)

    def _dispatch(self, x: ArrayLike, method: str, idx: Optional[np.ndarray] = None) -> ArrayLike:
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        if len(self.branches) == 1:
            out = getattr(self.branches[0], method)(arr)
        else:
            which = self.branch_index(arr) if idx is None else np.broadcast_to(idx, arr.shape)
            out = np.empty_like(arr)
            for k, branch in enumerate(self.branches):
                mask = which == k
                if mask.any():
                    out[mask] = getattr(branch, method)(arr[mask])
        if np.ndim(x) == 0:
            return float(out[0])
        return out

    def apply(self, x: ArrayLike) -> ArrayLike:
        return self._dispatch(x, "apply")

    def derivative(self, x: ArrayLike) -> ArrayLike:
        return self._dispatch(x, "derivative")

    def inverse_branch(self, branch_id: int, y: ArrayLike) -> ArrayLike:
        if not 0 <= branch_id < len(self.branches):
            raise MapDomainError(f"Branch id {branch_id} out of range for {len(self.branches)} branches")
        return self.branches[branch_id].inverse(y)

    def inverse_by_index(self, branch_ids: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Apply the inverse branch named per element of ``branch_ids``."""
        ids = np.broadcast_to(np.asarray(branch_ids), np.shape(y))
        out = np.empty(np.shape(y), dtype=float)
        for k, branch in enumerate(self.branches):
            mask = ids == k
            if mask.any():
                out[mask] = branch.inverse(np.asarray(y)[mask])
        return out

    def derivative_bounds(self) -> Tuple[float, float]:
        bounds = [b.derivative_bounds() for b in self.branches]
        return min(b[0] for b in bounds), max(b[1] for b in bounds)

    def image_of(self, lo: float, hi: float) -> List[Tuple[float, float]]:
        """Images of [lo, hi] intersected with each branch closure."""
        pieces = []
        for branch in self.branches:
            a = max(lo, branch.lo)
            b = min(hi, branch.hi)
            if a <= b:
                pieces.append((float(branch.apply(a)), float(branch.apply(b))))
        return pieces


@dataclass(frozen=True)
class MapSystem:
    """Fiber maps indexed by driving symbol."""

    maps: Tuple[FiberMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise MapDomainError("A map system needs at least one fiber map")

    @classmethod
    def expanding(cls, slopes: Sequence[int]) -> "MapSystem":
        return cls(tuple(FiberMap.linear(k) for k in slopes))

    @classmethod
    def pomeau_manneville(cls, alphas: Sequence[float], paper_coefficient: bool = False) -> "MapSystem":
        return cls(tuple(FiberMap.pomeau_manneville(a, paper_coefficient) for a in alphas))

    @property
    def alphabet_size(self) -> int:
        return len(self.maps)

    @property
    def is_affine(self) -> bool:
        return all(m.is_affine for m in self.maps)

    def __getitem__(self, symbol: int) -> FiberMap:
        return self.maps[int(symbol)]

    def __len__(self) -> int:
        return len(self.maps)


def compose_apply(system: MapSystem, omega: Realisation, n: int, x: ArrayLike) -> ArrayLike:
    """
    Evaluate T^n_w(x) = T_{theta^{n-1} w} o ... o T_w (x).

    Args:
        system: Map system indexed by driving symbol
        omega: Driving realisation
        n: Number of steps, n = 0 is the identity
        x: Point or array of points in [0, 1]

    Returns:
        Image point(s), same shape as x
    """
    if n < 0:
        raise MapDomainError(f"Composition depth must be nonnegative, got {n}")
    for symbol in omega.symbols(0, n):
        x = system[symbol].apply(x)
    return x


def iter_images(system: MapSystem, omega: Realisation, start: IntervalUnion, n_max: int) -> Iterator[IntervalUnion]:
    """Yield T^n_w(start) for n = 1..n_max, each computed from the previous one."""
    current = start
    for symbol in omega.symbols(0, n_max):
        fmap = system[symbol]
        pieces = []
        for lo, hi in current:
            pieces.extend(fmap.image_of(lo, hi))
        current = IntervalUnion.of(pieces)
        yield current


def image_of_interval(system: MapSystem, omega: Realisation, n: int,
                      interval: Union[Tuple[float, float], IntervalUnion]) -> IntervalUnion:
    """Exact image T^n_w(J) as a finite union of closed intervals."""
    if n < 0:
        raise MapDomainError(f"Image depth must be nonnegative, got {n}")
    start = interval if isinstance(interval, IntervalUnion) else IntervalUnion.interval(*interval)
    result = start
    for result in iter_images(system, omega, start, n):
        pass
    return result


@dataclass(frozen=True, eq=False)
class CylinderPartition:
    """
    The n-cylinders of a realisation, ordered left to right.

    ``words[i, s]`` is the branch index used at step s by cell i.
    """

    depth: int
    left: np.ndarray
    right: np.ndarray
    words: np.ndarray

    def __len__(self) -> int:
        return int(self.left.size)

    @property
    def lengths(self) -> np.ndarray:
        return self.right - self.left

    def cell(self, i: int) -> Tuple[float, float, Tuple[int, ...]]:
        return float(self.left[i]), float(self.right[i]), tuple(int(b) for b in self.words[i])


def _root_cells():
    return np.array([0.0]), np.array([1.0]), np.zeros((1, 0), dtype=np.uint8)


def _pull_back(system: MapSystem, symbols: np.ndarray, words: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Apply psi_{w_0} o ... o psi_{w_{d-1}} to y row-wise, where w is each row of ``words``."""
    for step in range(words.shape[1] - 1, -1, -1):
        ids = np.broadcast_to(words[:, step][:, None], y.shape)
        y = system[symbols[step]].inverse_by_index(ids, y)
    return y


def _check_cap(count: int, cap: int, depth: int) -> None:
    if count > cap:
        raise CylinderCapError(
            f"Refinement to depth {depth} needs {count} cells, exceeding the cell cap of {cap}"
        )


def _refine(system: MapSystem, symbols: np.ndarray, left: np.ndarray, right: np.ndarray,
            words: np.ndarray, cap: int):
    depth = words.shape[1]
    fmap = system[symbols[depth]]
    n_branches = len(fmap.branches)
    _check_cap(left.size * n_branches, cap, depth + 1)
    inner = fmap.edges[1:-1]
    if inner.size:
        y = np.tile(inner, (left.size, 1))
        y = _pull_back(system, symbols, words, y)
        y = np.clip(y, left[:, None], right[:, None])
        bounds = np.column_stack([left, y, right])
    else:
        bounds = np.column_stack([left, right])
    child_left = bounds[:, :-1].ravel()
    child_right = bounds[:, 1:].ravel()
    child_words = np.column_stack([
        np.repeat(words, n_branches, axis=0),
        np.tile(np.arange(n_branches, dtype=np.uint8), left.size),
    ]).astype(np.uint8)
    return child_left, child_right, child_words


def iter_cylinder_partitions(system: MapSystem, omega: Realisation, n_max: int,
                             cap: int = DEFAULT_CELL_CAP) -> Iterator[CylinderPartition]:
    """Yield the partitions of depth 1..n_max, each refining the previous one."""
    symbols = omega.symbols(0, n_max)
    left, right, words = _root_cells()
    for depth in range(1, n_max + 1):
        left, right, words = _refine(system, symbols, left, right, words, cap)
        yield CylinderPartition(depth, left, right, words)


def cylinder_partition(system: MapSystem, omega: Realisation, n: int,
                       cap: int = DEFAULT_CELL_CAP) -> CylinderPartition:
    """
    All n-cylinders of T^n_w, ordered left to right.

    Raises:
        MapDomainError: If n < 1
        CylinderCapError: If the refinement would exceed ``cap`` cells
    """
    if n < 1:
        raise MapDomainError(f"Cylinder depth must be >= 1, got {n}")
    partition = None
    for partition in iter_cylinder_partitions(system, omega, n, cap):
        pass
    return partition


def _leftmost_length(system: MapSystem, symbols: np.ndarray) -> float:
    y = 1.0
    for symbol in symbols[::-1]:
        y = float(system[symbol].inverse_branch(0, y))
    return y


def diameter_envelope(system: MapSystem, realisations: Sequence[Realisation], n_max: int,
                      cap: int = DEFAULT_CELL_CAP) -> np.ndarray:
    """
    Pointwise maximum of the cylinder diameter profiles of several realisations.

    Cells shorter than the largest leftmost depth-n_max cell of any realisation
    can never carry the maximum, so they are pruned as the refinement proceeds.
    """
    if n_max < 1:
        raise MapDomainError(f"Profile depth must be >= 1, got {n_max}")
    floor = max(_leftmost_length(system, omega.symbols(0, n_max)) for omega in realisations)
    floor *= 1.0 - 1e-9
    envelope = np.zeros(n_max)
    for omega in realisations:
        symbols = omega.symbols(0, n_max)
        left, right, words = _root_cells()
        for depth in range(n_max):
            left, right, words = _refine(system, symbols, left, right, words, cap)
            lengths = right - left
            envelope[depth] = max(envelope[depth], float(lengths.max()))
            keep = lengths >= floor
            left, right, words = left[keep], right[keep], words[keep]
            logger.debug(f"Depth {depth + 1}: {left.size} surviving cells")
            if left.size == 0:
                break
    return np.minimum.accumulate(envelope)


def cylinder_diameter_profile(system: MapSystem, omega: Realisation, n_max: int,
                              cap: int = DEFAULT_CELL_CAP) -> np.ndarray:
    """Maximal n-cylinder length for n = 1..n_max."""
    return diameter_envelope(system, [omega], n_max, cap)


def _chebyshev_offsets(count: int = CHEBYSHEV_POINTS) -> np.ndarray:
    k = np.arange(1, count + 1)
    interior = 0.5 * (1.0 + np.cos(np.pi * (2 * k - 1) / (2 * count)))
    return np.concatenate([[0.0], np.sort(interior), [1.0]])


def _word_derivative(system: MapSystem, symbols: np.ndarray, partition: CylinderPartition,
                     points: np.ndarray) -> np.ndarray:
    x = points.copy()
    d = np.ones_like(x)
    for step in range(partition.depth):
        fmap = system[symbols[step]]
        ids = np.broadcast_to(partition.words[:, step][:, None], x.shape)
        for k, branch in enumerate(fmap.branches):
            mask = ids == k
            if mask.any():
                d[mask] *= branch.derivative(x[mask])
                x[mask] = branch.apply(x[mask])
    return d


def distortion_profile(system: MapSystem, omega: Realisation, n_max: int,
                       cap: int = DEFAULT_CELL_CAP) -> np.ndarray:
    """
    Worst ratio sup|DT^n| / inf|DT^n| over n-cylinders for n = 1..n_max.

    Derivatives are sampled at both endpoints and eight Chebyshev-spaced
    interior points of every cell.
    """
    symbols = omega.symbols(0, n_max)
    offsets = _chebyshev_offsets()
    profile = np.empty(n_max)
    for partition in iter_cylinder_partitions(system, omega, n_max, cap):
        points = partition.left[:, None] + partition.lengths[:, None] * offsets[None, :]
        points = np.minimum(points, partition.right[:, None])
        d = np.abs(_word_derivative(system, symbols, partition, points))
        profile[partition.depth - 1] = float((d.max(axis=1) / d.min(axis=1)).max())
    return profile


def distortion_exponent(profile: Sequence[float]) -> float:
    """Fitted growth exponent of a distortion profile; 0 when the profile is flat."""
    values = np.asarray(profile, dtype=float)
    if np.allclose(values, values[0], rtol=0.0, atol=1e-12):
        return 0.0
    fit: Optional[LineFit] = loglog_fit(np.arange(1, values.size + 1), values, floor=0.0)
    return max(0.0, fit.slope) if fit is not None else 0.0


def expansion_constant(system: MapSystem) -> float:
    """
    A = sup over maps of sup|DT| plus sup over maps of sup|DT^-1|.

    sup|DT^-1| is 1 / inf|DT|, so A >= 2 whenever every slope is at least 1.
    """
    bounds = [fmap.derivative_bounds() for fmap in system.maps]
    sup_dt = max(b[1] for b in bounds)
    sup_inverse = max(1.0 / b[0] for b in bounds)
    return sup_dt + sup_inverse
