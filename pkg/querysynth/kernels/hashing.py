"""
64-bit multiplicative hashing for open-addressing tables.

    h = (key XOR seed) * 0x9E3779B97F4A7C15   (mod 2^64)
    h ^= h >> 32

Home slot of a key in a table of capacity 2^b is the top b bits of h.
"""
from typing import Callable

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIN_CAPACITY = 2

HashFn = Callable[[np.ndarray, int], np.ndarray]


def hash64(keys: np.ndarray, seed: int = 0) -> np.ndarray:
    x = np.ascontiguousarray(keys, dtype=np.int64).view(np.uint64) ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    x = x * GOLDEN
    return x ^ (x >> np.uint64(32))


def hash_columns(columns: np.ndarray, seed: int = 0, hash_fn: HashFn = hash64) -> np.ndarray:
    """Row hashes of a (rows, k) int64 key matrix."""
    h = hash_fn(columns[:, 0], seed)
    for j in range(1, columns.shape[1]):
        h = hash_fn(columns[:, j].astype(np.int64) ^ h.view(np.int64), seed)
    return h


def constant_hash(keys: np.ndarray, seed: int = 0) -> np.ndarray:
    """Every key collides; for worst-case probing tests."""
    return np.zeros(len(keys), dtype=np.uint64)


def capacity_for(n: int, load_factor_cap: float) -> int:
    """Smallest power of two c with n <= cap * c."""
    if not 0.0 < load_factor_cap < 1.0:
        raise ValueError("load_factor_cap must lie in (0, 1)")
    c = MIN_CAPACITY
    while n > load_factor_cap * c:
        c <<= 1
    return c


def home_slots(hashes: np.ndarray, capacity: int) -> np.ndarray:
    bits = capacity.bit_length() - 1
    return (hashes >> np.uint64(64 - bits)).astype(np.int64)
