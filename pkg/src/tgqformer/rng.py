"""Deterministic named random streams.

Every consumer of randomness asks for a stream keyed by ``(seed, *names)``.
Streams are independent of the order in which they are requested, which
keeps parameter initialisation stable when modules are added or removed.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _words(name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *names: object) -> np.random.Generator:
    """Return a fresh generator for the given seed and name path."""
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for n in names:
        entropy.extend(_words(str(n)))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def token_vector(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm pseudo-random embedding for a token string."""
    v = stream(seed, "token", token).standard_normal(dim)
    return v / np.linalg.norm(v)
