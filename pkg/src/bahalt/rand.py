"""Counter-based randomness.

Every random value in a run is a pure function of a seed and a tuple of
labels (purpose, party, round, ...), so executions are reproducible and
independent trials never share generator state.
"""

from __future__ import annotations

import hashlib
import random

Label = int | str | bytes


def _encode(labels: tuple[Label, ...]) -> bytes:
    # repr is injective on ints, strs and bytes, which is all we accept
    for x in labels:
        if not isinstance(x, (int, str, bytes)):
            raise TypeError(f"unsupported label type {type(x).__name__}")
    return repr(labels).encode()


def prf(seed: Label, *labels: Label) -> int:
    """128-bit pseudorandom integer indexed by ``(seed, *labels)``."""
    digest = hashlib.blake2b(_encode((seed, *labels)), digest_size=16).digest()
    return int.from_bytes(digest, "big")


def derive(seed: Label, *labels: Label) -> int:
    """Child seed for an independent substream."""
    return prf(seed, "derive", *labels)


def uniform_below(size: int, seed: Label, *labels: Label) -> int:
    # bias is at most size / 2**128
    if size <= 1:
        return 0
    return prf(seed, *labels) % size


def stream(seed: Label, *labels: Label) -> random.Random:
    """A ``random.Random`` for bulk draws, seeded from the counter PRF."""
    return random.Random(derive(seed, "stream", *labels))
