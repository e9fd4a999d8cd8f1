"""Seed stream splitting.

Every random draw in the package comes from a generator built by
:func:`stream`, keyed by ``(root seed, purpose tag, index...)``. Two calls
with the same key give identical streams; different keys give statistically
independent ones (``numpy.random.SeedSequence`` spawn keys).
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(seed: int, tag: str, *index: int) -> np.random.SeedSequence:
    key = (_tag_key(tag),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Return a generator for the stream ``(seed, tag, *index)``."""
    return np.random.default_rng(seed_sequence(seed, tag, *index))


def child_seed(seed: int, tag: str, *index: int) -> int:
    """A 63-bit integer seed derived from the stream key."""
    return int(seed_sequence(seed, tag, *index).generate_state(2, np.uint64)[0] >> np.uint64(1))
