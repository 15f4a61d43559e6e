"""Seeding helpers.

All randomness flows through numpy Generators backed by the counter-based
Philox bit generator. Independent streams for (dataset, site, block, ...)
units are spawned from a single root SeedSequence so results are reproducible
regardless of execution order across units.
"""

import numpy as np


def make_rng(seed):
    """Root generator for a run. `seed` may be an int or a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn(seed, n):
    """n independent child generators from one seed (or SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(c)) for c in ss.spawn(n)]


def child_seq(seed, key):
    """Deterministic child SeedSequence for a named unit.

    `key` is a tuple of small ints identifying the unit, e.g. (dataset, site).
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
    else:
        entropy = seed
    return np.random.SeedSequence(entropy=entropy, spawn_key=tuple(int(k) for k in key))
