"""Derived random seeds: one base seed, a stage tag and integer indices."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base_seed: int, tag: str, *indices: int) -> int:
    """Stable 32-bit seed for ``(base_seed, tag, *indices)``; independent of call order."""
    entropy = [int(base_seed) & 0xFFFFFFFF, zlib.crc32(tag.encode()), *(int(i) for i in indices)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
