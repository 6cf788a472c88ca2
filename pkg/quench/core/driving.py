"""
Two-sided Bernoulli driving sequences.

A realisation is never stored: the symbol at an absolute index is a pure
function of the seed and that index, so theta^k w for negative k costs the
same as for positive k.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from quench.utils.counter import counter_uniform, derive_seed

logger = logging.getLogger(__name__)

STREAM_SYMBOLS = 0x53594D42
STREAM_REPLICA = 0x5245504C
WEIGHT_TOL = 1e-12


class DrivingConfigError(ValueError):
    """Raised when driving weights or seeds are invalid."""
    pass


@dataclass(frozen=True)
class DrivingConfig:
    """Bernoulli measure on {0, ..., s-1}^Z with the given symbol weights."""

    weights: Tuple[float, ...] = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)
        if not weights:
            raise DrivingConfigError("Driving weights must not be empty")
        if any(w < 0 for w in weights):
            raise DrivingConfigError(f"Driving weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > WEIGHT_TOL:
            raise DrivingConfigError(f"Driving weights must sum to 1, got sum {sum(weights)}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DrivingConfigError(f"Seed must be an unsigned 64-bit value, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def alphabet_size(self) -> int:
        return len(self.weights)

    @property
    def cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        return cdf

    def with_seed(self, seed: int) -> "DrivingConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Realisation:
    """A driving sequence viewed from position ``offset``."""

    config: DrivingConfig
    offset: int = 0

    @property
    def seed(self) -> int:
        return self.config.seed

    def symbols(self, start: int, stop: int) -> np.ndarray:
        """Symbols at relative indices start..stop-1."""
        if stop <= start:
            return np.zeros(0, dtype=np.int64)
        index = np.arange(self.offset + start, self.offset + stop, dtype=np.int64)
        u = counter_uniform(self.config.seed, STREAM_SYMBOLS, index)
        picked = np.searchsorted(self.config.cdf, u, side="right")
        return np.minimum(picked, self.config.alphabet_size - 1).astype(np.int64)

    def symbol_at(self, i: int) -> int:
        return int(self.symbols(i, i + 1)[0])

    def shift(self, k: int) -> "Realisation":
        """theta^k w; the original is unchanged."""
        return replace(self, offset=self.offset + int(k))


def sample_realisations(config: DrivingConfig, count: int) -> List[Realisation]:
    """
    Draw ``count`` replicate realisations.

    Replicate 0 is the base seed's own stream; replicate k >= 1 uses a seed
    mixed from (seed, k).
    """
    if count < 1:
        raise DrivingConfigError(f"Realisation count must be >= 1, got {count}")
    realisations = [Realisation(config)]
    for k in range(1, count):
        realisations.append(Realisation(config.with_seed(derive_seed(config.seed, STREAM_REPLICA, k))))
    logger.debug(f"Sampled {count} realisations from seed {config.seed}")
    return realisations


def symbol_frequencies(omega: Realisation, start: int, stop: int) -> np.ndarray:
    """Empirical frequency of each symbol over relative indices start..stop-1."""
    counts = np.bincount(omega.symbols(start, stop), minlength=omega.config.alphabet_size)
    return counts / max(stop - start, 1)
