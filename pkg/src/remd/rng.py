"""Seeded randomness.

Every stream is a Philox-4x64 counter-based generator keyed by
``SHA-256(f"{seed}:{purpose}")`` (first 16 bytes, little-endian), so any
named sub-stream can be regenerated without replaying the others.
"""

import hashlib

import numpy as np

GENERATOR_ID = "numpy.random.Philox(key=sha256(seed:purpose)[:16])"


def derive_key(seed: int, purpose: str = "") -> int:
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def derive_seed(seed: int, purpose: str) -> int:
    """A 63-bit integer sub-seed for (seed, purpose)."""
    return derive_key(seed, purpose) & ((1 << 63) - 1)


def generator(seed: int, purpose: str = "") -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(seed, purpose)))
