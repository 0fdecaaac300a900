"""Named, counter-based random streams.

Every stochastic stage draws from its own stream, derived from one master
seed and a stage name.  Within a stream, block ``index`` (a realization, an
epoch, a replicate) is produced by a Philox generator whose counter starts
at ``index`` in its third word, so any block can be regenerated on its own
without replaying the ones before it.
"""
from __future__ import annotations

import zlib
from functools import lru_cache

import numpy as np

STREAMS = ("measure", "mine-init", "mine-data", "mine-cells", "mine-shuffle", "suite")


@lru_cache(maxsize=256)
def _stream_key(seed: int, name: str) -> tuple:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return tuple(int(k) for k in ss.generate_state(2, dtype=np.uint64))


def _key(seed, name) -> np.ndarray:
    return np.array(_stream_key(int(seed), name), dtype=np.uint64)


def stream(seed: int, name: str) -> np.random.Generator:
    """Sequential generator for stage ``name``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, name)))


def block(seed: int, name: str, index: int) -> np.random.Generator:
    """Generator for block ``index`` of stage ``name``.

    Blocks are disjoint windows of the Philox counter space (2**128 draws
    apart), so ``block(s, n, 7)`` yields the same numbers whether or not
    blocks 0..6 were ever drawn.
    """
    if index < 0:
        raise ValueError("block index must be non-negative")
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed, name), counter=counter))
