"""Counter-based random streams keyed by stable identifiers.

Every random draw in the package goes through :func:`stream`, so results
depend only on (seed, item identifier) and never on iteration order,
thread scheduling or OS entropy.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def stable_hash(text: str) -> int:
    """64-bit hash of ``text`` that is identical across runs and platforms."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(*parts: object) -> int:
    """Combine a global seed and item identifiers into one 64-bit seed."""
    return stable_hash(_SEP.join(f"{type(p).__name__}:{p}" for p in parts))


def stream(seed: int) -> np.random.Generator:
    """Philox generator keyed directly by ``seed`` (counter starts at zero)."""
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))


def keyed_stream(*parts: object) -> np.random.Generator:
    return stream(derive_seed(*parts))
