"""Deterministic random streams.

Every random decision in the package draws from a counter-based Philox
generator keyed by a hash of (seed, stream labels).  Streams are independent
of each other and of call order, so any pipeline stage can be re-run or
parallelised without changing results.
"""

import hashlib

import numpy as np


def derive_key(seed: int, *stream) -> int:
    """128-bit Philox key from a seed plus arbitrary stream labels."""
    h = hashlib.sha256()
    h.update(repr((int(seed),) + tuple(str(s) for s in stream)).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def derive_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator for the given (seed, stream) combination."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *stream)))
