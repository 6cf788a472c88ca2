"""
Finite unions of closed subintervals of [0, 1].
"""
from dataclasses import dataclass
from typing import Iterable, Iterator, Tuple

import numpy as np

Interval = Tuple[float, float]


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted, pairwise disjoint closed intervals. Degenerate points are allowed."""

    intervals: Tuple[Interval, ...] = ()

    def __post_init__(self):
        previous_hi = -np.inf
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"Interval [{lo}, {hi}] has lo > hi")
            if lo <= previous_hi:
                raise ValueError("Intervals must be sorted and disjoint; use IntervalUnion.of()")
            previous_hi = hi

    @classmethod
    def of(cls, pieces: Iterable[Interval]) -> "IntervalUnion":
        """Build a union from arbitrary intervals, merging overlapping or touching ones."""
        ordered = sorted((float(lo), float(hi)) for lo, hi in pieces)
        merged: list = []
        for lo, hi in ordered:
            if lo > hi:
                raise ValueError(f"Interval [{lo}, {hi}] has lo > hi")
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(tuple(merged))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "IntervalUnion":
        return cls.of([(lo, hi)])

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def measure(self) -> float:
        """Lebesgue measure of the union."""
        return float(sum(hi - lo for lo, hi in self.intervals))

    def intersects(self, lo: float, hi: float) -> bool:
        """Whether the union meets the closed interval [lo, hi]."""
        return any(a <= hi and lo <= b for a, b in self.intervals)

    def contains(self, x):
        """Vectorized membership test."""
        arr = np.asarray(x, dtype=float)
        inside = np.zeros(arr.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (arr >= lo) & (arr <= hi)
        return bool(inside) if inside.ndim == 0 else inside
