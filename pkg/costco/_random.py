"""Counter-based random streams.

Every random draw in costco comes from a Philox generator keyed by a root seed and a
tuple of stream identifiers, so restarts, RTPM starts and simulation replicas get
independent streams that don't depend on evaluation order.
"""

import hashlib
from typing import Union

import numpy as np

StreamId = Union[int, str]


def _stream_word(stream: StreamId) -> int:
    if isinstance(stream, int):
        assert stream >= 0, "Stream ids must be nonnegative."
        return stream
    # Stable across processes, unlike `hash()`.
    return int.from_bytes(hashlib.sha256(stream.encode("utf-8")).digest()[:4], "little")


def make_rng(seed: int, *streams: StreamId) -> np.random.Generator:
    """Generator for the stream `(seed, *streams)`."""
    entropy = [int(seed) % (2**63)] + [_stream_word(s) for s in streams]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
