"""
Counter-based pseudorandom numbers.

Every value is a pure function of a seed and a tuple of integer keys, so any
element of any stream can be regenerated without replaying the stream. This
is what makes sample blocks independent of worker scheduling.
"""
from typing import Union

import numpy as np

_MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_UNIT = 2.0 ** -53

Key = Union[int, np.ndarray]


def as_u64(value: Key) -> np.ndarray:
    """
    Reinterpret an integer or integer array as unsigned 64-bit words.

    Negative values wrap modulo 2^64, so negative stream indices are valid keys.
    """
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return np.asarray(int(value) & _MASK64, dtype=np.uint64)
    arr = np.asarray(value)
    if arr.dtype == np.uint64:
        return arr
    if arr.dtype.kind not in "iu":
        raise TypeError(f"Counter keys must be integers, got dtype {arr.dtype}")
    return arr.astype(np.int64).view(np.uint64)


def mix64(words: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise."""
    with np.errstate(over="ignore"):
        z = words + _GOLDEN
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)


def counter_hash(seed: int, *keys: Key) -> np.ndarray:
    """Hash a seed and a sequence of (broadcastable) keys to 64-bit words."""
    h = mix64(as_u64(seed))
    for key in keys:
        h = mix64(h ^ as_u64(key))
    return h


def counter_uniform(seed: int, *keys: Key) -> np.ndarray:
    """
    Uniform variates in [0, 1) addressed by (seed, keys).

    Args:
        seed: 64-bit stream seed
        *keys: Integer keys or integer arrays; arrays broadcast against each other

    Returns:
        Float64 array (0-d when every key is scalar) with 53 random bits per value
    """
    h = counter_hash(seed, *keys)
    return (h >> _S11).astype(np.float64) * _UNIT


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child seed as a plain Python int."""
    return int(counter_hash(seed, *keys))
