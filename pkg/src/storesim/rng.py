"""Seeded random streams shared by every sampler in the package."""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator; the seed is the full 64-bit key."""
    return np.random.Generator(np.random.Philox(int(seed)))


def open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53-bit resolution."""
    k = rng.integers(0, 2**53, size=n, dtype=np.int64)
    return (k + 0.5) * 2.0**-53
