"""Deterministic seed derivation for independent random streams.

Every random stream in the package descends from an integer master seed
plus an integer path (dataset index, replicate index, ...), so any task
can be recomputed in isolation and results never depend on execution
order or worker count.
"""

from __future__ import annotations

import numpy as np


def _seed_sequence(master_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(int(master_seed), *[int(p) for p in path]))


def spawn_rng(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(_seed_sequence(master_seed, *path))


def spawn_seed(master_seed: int, *path: int) -> int:
    """Derive a child integer seed; stable across runs and platforms."""
    return int(_seed_sequence(master_seed, *path).generate_state(1, np.uint64)[0])
