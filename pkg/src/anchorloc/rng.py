"""Deterministic random-stream allocation.

Every stochastic component draws from its own named stream of a Philox
counter-based generator, keyed by (seed, stream name). Streams are
independent by construction, so adding draws to one component never
perturbs another, and regenerating with the same seed is bit-identical
across runs and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]

_MASK64 = (1 << 64) - 1


def _stream_key(seed: int, name: str) -> int:
    """128-bit Philox key from a 64-bit seed and a stream name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    name_word = int.from_bytes(digest[:8], "little")
    return ((int(seed) & _MASK64) << 64) | name_word


def stream(seed: int, name: str) -> np.random.Generator:
    """Named, seed-keyed Philox generator.

    `name` identifies the purpose ("terrain", "trajectory", "masks",
    "net-init", ...). The same (seed, name) pair always yields the same
    sequence.
    """
    return np.random.Generator(np.random.Philox(key=_stream_key(seed, name)))
