"""Deterministic seed derivation helpers.

Every randomized routine in the package takes a seed and derives child
streams through `child_seed`, so results depend only on (seed, key path)
and never on execution order. That is what makes parallel fold execution
and serial execution produce identical reports.
"""
from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence"


def child_seed(seed, *key) -> np.random.SeedSequence:
    """Derive an independent SeedSequence from `seed` and an integer key path.

    `seed` may be a plain integer or an already-derived SeedSequence; in the
    latter case the key path is appended, so derivations compose.
    """
    key = tuple(int(k) for k in key)
    if isinstance(seed, np.random.SeedSequence):
        base = tuple(seed.spawn_key)
        return np.random.SeedSequence(seed.entropy, spawn_key=base + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def rng_for(seed, *key) -> np.random.Generator:
    """Generator seeded by `child_seed(seed, *key)`."""
    return np.random.default_rng(child_seed(seed, *key))


def seed_to_int(seed, *key) -> int:
    """Flatten a derived seed into a single uint64 (for APIs that store ints)."""
    return int(child_seed(seed, *key).generate_state(1, np.uint64)[0])


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of `a` and of `b`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    d2 = sq_a + sq_b - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2
