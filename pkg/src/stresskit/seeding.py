"""Named sub-seeds so each random component can be reproduced in isolation."""

from __future__ import annotations

import zlib

import numpy as np


def sub_seed(seed: int, name: str) -> int:
    """Derive a 64-bit seed for component `name` from the top-level seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, *counters: int) -> np.random.Generator:
    """Counter-based stream: (seed, i, j, ...) always maps to the same generator."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, counters)])
    )
