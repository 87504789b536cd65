"""Seeded, splittable random streams.

Every consumer derives its generator from ``(seed, *key)`` so that results do
not depend on the order in which replications are executed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode())


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for the stream labelled ``key`` under ``seed``."""
    if seed is None:
        raise ValueError("a seed is mandatory")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
