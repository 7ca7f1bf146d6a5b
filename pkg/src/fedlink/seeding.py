"""Named random streams derived from one root seed.

A stream is keyed by (root seed, crc32 of its purpose name, integer keys) and
built with ``numpy.random.SeedSequence``, so the same key always yields the
same generator and distinct keys are statistically independent.
"""
from __future__ import annotations

import zlib

import numpy as np


def _entropy(root: int, name: str, keys) -> list[int]:
    return [int(root), zlib.crc32(name.encode()), *(int(k) for k in keys)]


def stream(root: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(_entropy(root, name, keys)))


def derive_seed(root: int, name: str, *keys: int) -> int:
    return int(np.random.SeedSequence(_entropy(root, name, keys)).generate_state(1, dtype=np.uint32)[0])
