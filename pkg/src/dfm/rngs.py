"""Named, reproducible RNG substreams.

All randomness in a run flows from one seed; independent consumers get
generators derived from (seed, name, indices...) so commands reproduce
bit-for-bit regardless of execution order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *names) -> np.random.Generator:
    """Generator for the substream identified by (seed, *names).

    Names may be strings or integers; strings are hashed with crc32 so
    the derivation is stable across processes and platforms.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        if isinstance(name, (int, np.integer)):
            entropy.append(int(name) & 0xFFFFFFFFFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(name).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
