"""Counter-based random streams.

Every stochastic step in the package draws from a stream addressed by
``(seed, purpose tag, index)``.  Streams are built on Philox, a
counter-based generator: the key encodes seed and tag, the counter block
encodes the index.  Distinct addresses give statistically independent
streams, and the draw for address (s, t, i) never depends on how many
other addresses were consumed or on which worker consumed them.  That is
what makes sampled estimates reproducible independent of the worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_hash(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return the Generator for address ``(seed, tag, index)``.

    Parameters
    ----------
    seed : int
        Run-level seed.
    tag : str
        Purpose label, e.g. ``"sampled.perm"``.  Hashed into the key so
        different purposes never share a stream.
    index : int, optional
        Sub-stream index (e.g. permutation number).  Nonnegative.

    Returns
    -------
    numpy.random.Generator
        Freshly positioned generator; no state is shared between calls.
    """
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    key = np.array([seed & _MASK64, _tag_hash(tag)], dtype=np.uint64)
    counter = np.array(
        [0, 0, index & _MASK64, (index >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
