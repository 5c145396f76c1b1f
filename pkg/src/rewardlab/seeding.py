"""Counter-based random stream splitting.

Every random draw in the package comes from ``stream(seed, name, index)`` so that
independent pieces of work (instances of a suite, probes of a checker) get
reproducible, non-overlapping generators regardless of execution order.
"""

import hashlib

import numpy as np


def stream_key(seed: int, name: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{name}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``(seed, name, index)``."""
    return np.random.default_rng(np.random.SeedSequence(stream_key(seed, name, index)))
