"""Derived random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(master seed, *key)`` through :class:`numpy.random.SeedSequence`.
Streams never depend on scheduling, so results are identical for any worker
count.
"""

import numpy as np

# stream roles
EFFECTS = 0
NOISE = 1
PERMUTATIONS = 2
COVARIATE = 3
BOOTSTRAP = 4


def stream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
