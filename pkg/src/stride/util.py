"""Seeding and small shared helpers."""

import os

import numpy as np


def derive_seed(master: int, *counters: int) -> np.random.SeedSequence:
    """Deterministic child seed from a master seed and counter tuple.

    Every stochastic component derives its randomness this way so that a
    single master seed reproduces a whole run bit for bit.
    """
    return np.random.SeedSequence((int(master),) + tuple(int(c) for c in counters))


def rng_for(master: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *counters))


def thread_cap(default: int = 1) -> int:
    """Parallelism cap from the STRIDE_THREADS environment variable."""
    raw = os.environ.get("STRIDE_THREADS", "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def as_f64(x) -> np.ndarray:
    """Contiguous float64 view/copy of ``x``."""
    return np.ascontiguousarray(x, dtype=np.float64)
