"""Named random streams derived from one master seed.

Every source of randomness in a run is a stream keyed by (master_seed,
purpose, indices...). Streams with distinct keys are statistically
independent, and a stream's draws never depend on how many workers are
running or in which order results arrive.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    # Stable across processes: never rely on Python's randomized str hash.
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(master_seed: int, *path) -> np.random.Generator:
    """Return the random stream identified by (master_seed, *path).

    Path components may be strings (purpose names) or integers (generation,
    agent index, ...). The same key always yields the same stream.
    """
    entropy = [int(master_seed) & _MASK64] + [_key_part(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(master_seed: int, *path) -> int:
    """A 63-bit integer seed for APIs that want a plain int."""
    return int(stream(master_seed, *path).integers(0, 2**63))
