"""Deterministic RNG substreams.

Every replication r of every randomized routine draws from
``substream(seed, r)``; parallel and serial execution therefore produce
bitwise-identical results because no stream is ever shared.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the given seed and counter key."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def as_generator(seed) -> np.random.Generator:
    """Pass through Generators, otherwise treat the argument as a seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
