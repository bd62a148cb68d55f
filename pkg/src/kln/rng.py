"""Seeded random streams.

Every consumer of randomness draws from a named substream of the single
run seed, so adding or reordering one consumer never shifts the draws
seen by another.  Stream names in use: "init", "shuffle-s", "shuffle-t",
"split", "diagnostics", "blobs".
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (seed, name), stable across processes."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    # Built-in hash() is salted per process; use a keyed digest instead.
    tag = int.from_bytes(
        hashlib.blake2s(name.encode("utf-8"), digest_size=8).digest(), "little"
    )
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
