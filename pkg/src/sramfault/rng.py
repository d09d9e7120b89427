"""Deterministic random streams.

Every unit of work (a generated block, an evaluation iteration) draws from its
own Philox stream keyed by the run seed plus a tuple of integers, so results
do not depend on scheduling or thread count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for a child run, e.g. one fault map of a sweep."""
    seq = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
