"""Seeded random number streams.

Every stochastic operation in this package draws from a Philox4x64
counter-based generator keyed by ``(seed, *stream)`` through numpy's
``SeedSequence``.  The stream tags below keep independent concerns
(data sampling, network init, label corruption, ...) on disjoint
streams even when they share a user-visible seed, so any single piece
can be reproduced in isolation.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "philox4x64(seedsequence)"

# Stream tags; values are part of the reproducibility contract.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_NOISE = 3
STREAM_CORRUPT = 4
STREAM_TARGET = 5
STREAM_MC = 6
STREAM_TEST = 7


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` on the given stream tag(s)."""
    if not isinstance(seed, (int, np.integer)):
        raise ValueError(f"seed must be an integer, got {type(seed).__name__}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + stream)))
