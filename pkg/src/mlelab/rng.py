"""Seeded random streams.

Every Monte Carlo replicate owns a generator derived from the master seed and
a tuple of integer keys, so results never depend on scheduling or worker count.
"""
from __future__ import annotations

import numpy as np


def child_stream(master_seed: int, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return np.random.Generator(np.random.PCG64(seq))


def as_stream(stream) -> np.random.Generator:
    """Accept a Generator, an integer seed or None."""
    if isinstance(stream, np.random.Generator):
        return stream
    return np.random.default_rng(stream)
