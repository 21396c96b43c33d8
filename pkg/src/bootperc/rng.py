"""Deterministic per-trial random streams.

The stream for trial ``i`` under master seed ``s`` is seeded with the i-th
output of the splitmix64 sequence started at ``s``:

    seed_i = mix64((s + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64)

where ``mix64`` is the splitmix64 finalizer.  The seeded generator is
numpy's PCG64.  This mapping is part of the external reproducibility
contract: results files are bit-identical across runs, batch sizes, and
worker counts, so the mapping must never change silently.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer (Steele, Lea & Flood's constants)."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, index: int) -> int:
    """64-bit seed for stream ``index`` under ``master``."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    return mix64((master + (index + 1) * _GOLDEN) & _MASK64)


def stream(master: int, index: int) -> np.random.Generator:
    """Independent generator for trial ``index``."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, index)))
