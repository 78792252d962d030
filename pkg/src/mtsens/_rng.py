"""Seed splitting.

All randomness in the package flows from a single master seed through
``numpy.random.SeedSequence`` spawn keys, so any component's stream can be
reproduced (or held fixed) independently of the others and of execution
order.
"""

from __future__ import annotations

import numpy as np

# top-level stream ids under the master seed
GPS_STREAM = 0
SENS_STREAM = 1
FIT_STREAM = 2
SIM_STREAM = 3


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by ``path``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(path)))


def subseed(master_seed: int, *path: int) -> int:
    """Stable integer seed for the substream identified by ``path``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])
