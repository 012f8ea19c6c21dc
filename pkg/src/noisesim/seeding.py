"""Deterministic RNG streams keyed by (seed, entity ...) tuples.

Every stochastic stage derives its generator from a key instead of sharing a
global stream, so adding or removing one entity never perturbs the draws of
another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value >= 0:
            return value
        # negative ints are folded into the string path so they stay distinct
    digest = hashlib.blake2b(repr(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(*key) -> np.random.SeedSequence:
    """SeedSequence for an arbitrary tuple of ints/strings."""
    return np.random.SeedSequence([_word(p) for p in key])


def derive_rng(*key) -> np.random.Generator:
    """A fresh PCG64 generator for ``key``; equal keys give equal streams."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*key)))


def derive_seed(*key) -> int:
    """A 63-bit integer seed for ``key`` (for APIs that want a plain int)."""
    return int(seed_sequence(*key).generate_state(1, np.uint64)[0] >> np.uint64(1))
