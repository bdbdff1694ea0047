"""Deterministic, cross-platform random streams.

All randomness in the package flows from a single base seed. Independent
streams are derived by hashing (seed, purpose tags) into a Philox key, so
the same (seed, tags) pair yields the same stream on any platform, and
distinct tags give statistically independent streams.
"""

import hashlib

import numpy as np


def stream(seed: int, *tags) -> np.random.Generator:
    """Derive an independent Generator from a base seed and purpose tags.

    Tags may be strings or integers; they are encoded unambiguously
    (length-prefixed) before hashing so no two tag tuples collide.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for tag in tags:
        part = str(tag).encode("utf-8")
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    digest = h.digest()
    key = np.frombuffer(digest, dtype=np.uint64)[:2]
    return np.random.Generator(np.random.Philox(key=key))
