"""Seeding helpers.

All randomness in the package flows through explicitly seeded
``numpy.random.Generator`` objects.  Ensembles (Monte-Carlo paths, sweep
cells, per-sample perturbations) use one substream per unit of work, derived
from the master seed and the unit's index via ``SeedSequence`` spawn keys, so
results do not depend on execution order.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | None) -> np.random.Generator:
    """Generator for a single stream of work."""
    return np.random.default_rng(seed)


def substream(seed: int | None, *key: int) -> np.random.Generator:
    """Generator for the substream identified by ``key`` under ``seed``.

    The same (seed, key) pair always yields the same stream, independent of
    how many sibling substreams exist or in which order they are consumed.
    """
    entropy = 0 if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(key)))
