"""Keyed random-number streams.

Streams are derived from an integer key tuple via :class:`numpy.random.SeedSequence`,
so every (seed, cell, replication, purpose) combination gets an independent
generator regardless of execution order. No global state is used anywhere in
the package.
"""

from __future__ import annotations

import numpy as np


def stream(*key: int) -> np.random.Generator:
    """Return a generator keyed on the given integers.

    The same key always yields the same stream; distinct keys yield
    statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def as_generator(seed_or_rng: int | np.random.Generator | None) -> np.random.Generator:
    """Coerce an int seed, an existing generator, or None into a generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    if seed_or_rng is None:
        return np.random.default_rng()
    return stream(int(seed_or_rng))
