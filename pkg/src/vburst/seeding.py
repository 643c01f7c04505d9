"""Deterministic, named RNG streams.

All randomness in the package flows from a single u64 seed.  Independent
streams are derived by name so consumption in one stream never perturbs
another, and the derivation is stable across platforms and runs.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def child_rng(seed: int, *names: str) -> np.random.Generator:
    """Return a Generator for the stream identified by (seed, *names)."""
    entropy = [int(seed) & _MASK64] + [_name_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
