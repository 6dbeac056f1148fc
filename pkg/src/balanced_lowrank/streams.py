"""Named random streams derived from one 64-bit seed.

Each stream name hashes to its own spawn key, so drawing more or fewer
numbers from one stream (for instance by changing the step count) never
shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` under ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def child_seed(seed: int, name: str) -> int:
    """A 63-bit integer seed for ``name``, for APIs that take an int."""
    return int(stream(seed, name).integers(0, 2**63 - 1))
