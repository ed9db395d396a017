"""Counter-based seed derivation.

Every random draw in the package comes from a ``numpy.random.Philox`` generator
keyed by a 64-bit seed derived from ``(root_seed, stream, index)``.  Results are
therefore independent of chunking, worker count and evaluation order.
"""
from __future__ import annotations

import numpy as np

#: stream tag for Levy path increments and jumps
PATHS = 0
#: stream tag for the unit exponential thresholds of the random time
THETA = 1
#: stream tag for Brownian-bridge normal blocks
BRIDGE = 2
#: stream tag for inner draws of nested Monte Carlo checks
INNER = 3


def derive_seed(root_seed: int, stream: int, index: int) -> int:
    """Return the 64-bit key for member ``index`` of ``stream`` under ``root_seed``."""
    if root_seed < 0 or stream < 0 or index < 0:
        raise ValueError("seeds, streams and indices must be non-negative")
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_seeds(root_seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Vector of :func:`derive_seed` values for indices ``start, ..., stop - 1``."""
    return np.array([derive_seed(root_seed, stream, i) for i in range(start, stop)], dtype=np.uint64)


def generator(seed: int) -> np.random.Generator:
    """Philox generator keyed by a derived 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed)))
