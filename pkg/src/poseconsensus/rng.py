"""Seed handling.

All randomness comes from numpy's PCG64 bit generator, which produces the same
stream on every platform for a given seed. Stage seeds are derived from one
root seed by keying a ``SeedSequence`` with the stage name, so adding a stage
never shifts the streams of the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def stage_seed(root_seed: int, stage: str) -> int:
    """Deterministic 63-bit seed for ``stage`` derived from ``root_seed``."""
    key = zlib.crc32(stage.encode("utf-8"))
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, key])
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 1 << 32], dtype=np.uint64)) >> 1


def stage_rng(root_seed: int, stage: str) -> np.random.Generator:
    return make_rng(stage_seed(root_seed, stage))
