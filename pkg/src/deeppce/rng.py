"""Counter-based random streams.

All randomness in the library flows through ``make_rng(seed, *path)``.  The
path is a tuple of small ints or short strings naming the consumer (module,
run index, column index, ...).  Distinct paths give statistically independent
Philox streams, so chunked Monte Carlo columns can be regenerated without
storing them and per-restart training draws never collide.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["make_rng", "spawn_seed_sequence"]


def _path_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream path ints must be non-negative")
        return int(part)
    if isinstance(part, str):
        # stable across runs and platforms, unlike hash()
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path parts must be int or str, got {type(part)!r}")


def spawn_seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_path_key(p) for p in path))


def make_rng(seed: int, *path) -> np.random.Generator:
    """Independent Philox generator for (seed, path)."""
    return np.random.Generator(np.random.Philox(spawn_seed_sequence(seed, *path)))
