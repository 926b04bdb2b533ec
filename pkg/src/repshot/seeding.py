"""Derive independent, reproducible component seeds from one global seed."""
from __future__ import annotations

import zlib

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys) -> int:
    """Fold ``keys`` (ints or strings) into ``seed`` one splitmix64 step at a time.

    Strings are hashed with CRC32 so the result does not depend on Python's
    randomised ``hash``. The output fits in 63 bits.
    """
    x = splitmix64(int(seed) & MASK64)
    for key in keys:
        k = zlib.crc32(key.encode()) if isinstance(key, str) else int(key) & MASK64
        x = splitmix64(x ^ k)
    return x >> 1
