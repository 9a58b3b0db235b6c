"""Seeded random streams.

Every random draw in the package goes through :func:`substream`, which derives an
independent PCG64 generator from a 64-bit seed and a text label. Two calls with the
same ``(seed, label)`` pair always yield the same stream; different labels give
statistically independent streams. Reproducibility is promised within this
implementation only.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Return the generator for ``(seed, label)``."""
    entropy = [int(seed) & _MASK64, label_key(label)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_seed(seed: int, label: str) -> int:
    """Derive a 64-bit seed for a nested component (shadow model, world, ...)."""
    return int(substream(seed, label).integers(0, 2**63 - 1))
