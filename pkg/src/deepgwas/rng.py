"""Named, splittable random streams.

Every sampler draws from its own stream keyed by ``(seed, role, index)``, so
adding a new consumer never shifts the numbers seen by existing ones. Streams
are Philox (counter-based) generators seeded through ``SeedSequence``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, role: str, index: int = 0) -> int:
    """Stable 64-bit child seed for ``(seed, role, index)``."""
    key = f"{int(seed) & _MASK64}:{role}:{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def stream(seed: int, role: str, index: int = 0) -> np.random.Generator:
    child = derive_seed(seed, role, index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(child)))
