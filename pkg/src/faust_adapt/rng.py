"""Deterministic RNG stream derivation.

Every stochastic component (initialization, shuffling, augmentation, dropout,
MC sampling) draws from a generator derived from a base seed plus a tuple of
context keys, so any subcomputation is reproducible independently of
execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"rng keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"unsupported rng key type: {type(key).__name__}")


def derive_rng(*keys) -> np.random.Generator:
    """A PCG64 generator keyed by the given (int | str) context tuple."""
    if not keys:
        raise ValueError("derive_rng: at least one key required")
    return np.random.default_rng([_key_to_int(k) for k in keys])


def derive_seed(*keys) -> int:
    """A stable 63-bit integer seed derived from the context tuple."""
    h = hashlib.sha256()
    for k in keys:
        h.update(str(_key_to_int(k)).encode("ascii"))
        h.update(b"/")
    return int.from_bytes(h.digest()[:8], "little") >> 1
