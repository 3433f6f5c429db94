"""Seeded counter-based random streams keyed by (seed, labels...)."""

import hashlib

import numpy as np


def _key(k):
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    digest = hashlib.blake2b(str(k).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed, *keys):
    """Philox generator for the stream identified by ``seed`` and ``keys``.

    Distinct key tuples give independent streams, so callers can derive
    per-call or per-text generators without sharing state.
    """
    entropy = [_key(seed)] + [_key(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
