"""One user-facing seed, expanded into independent per-subsystem streams."""

from __future__ import annotations

import zlib

import numpy as np


def _seed_sequence(seed: int, subsystem: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(subsystem.encode())])


def derive_seed(seed: int, subsystem: str) -> int:
    """Stable non-negative 63-bit integer for ``(seed, subsystem)``."""
    hi, lo = (int(x) for x in _seed_sequence(seed, subsystem).generate_state(2))
    return ((hi << 32) | lo) >> 1


def rng_for(seed: int, subsystem: str) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by seed and subsystem name."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, subsystem)))
