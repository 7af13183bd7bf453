"""Named, reproducible random streams.

Every stochastic operation draws from its own stream derived from
(seed, tag) so that results are independent of call order and of how
work is sharded across workers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, tag: str) -> np.random.Generator:
    """Generator for the stream named `tag` under master `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream_key(tag)]))
