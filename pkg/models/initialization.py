"""
Versor initialization: He-style variance scaled by the algebra dimension.
"""

from typing import Union

import numpy as np

from core.algebra import CL41, DEFAULT_DTYPE, gp_bitmask_array

ALGEBRA_DIM = CL41.dim

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def versor_variance(fan_in: int) -> float:
    return 2.0 / (fan_in * ALGEBRA_DIM)


def versor_init(fan_in: int, rng_seed: SeedLike = None, fan_out: int = ALGEBRA_DIM) -> np.ndarray:
    """(fan_in, fan_out) weights drawn from Normal(0, 2 / (fan_in * 32))."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be at least 1, got {fan_in}")
    std = np.sqrt(versor_variance(fan_in))
    return _rng(rng_seed).normal(0.0, std, size=(fan_in, fan_out)).astype(DEFAULT_DTYPE)


def product_variance_ratio(n_samples: int = 10000, sigma_w2: float = 1.0 / ALGEBRA_DIM,
                           rng_seed: SeedLike = None) -> float:
    """Var(W x) / Var(x) for unit-variance x and weight multivectors with variance ``sigma_w2``."""
    rng = _rng(rng_seed)
    x = rng.normal(0.0, 1.0, size=(n_samples, ALGEBRA_DIM))
    w = rng.normal(0.0, np.sqrt(sigma_w2), size=(n_samples, ALGEBRA_DIM))
    y = gp_bitmask_array(w, x, CL41)
    return float(np.var(y) / np.var(x))
