"""Counter-based random streams.

Every consumer asks for its own stream by (seed, stream id, *index); the
same triple always yields the same draws, independent of how work is
split across workers.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    CHANNEL = 0
    NOISE = 1
    SHUFFLE = 2
    INIT = 3
    SENSING = 4
    PILOT_PHASE = 5
    SCHEDULE = 6
    VALIDATION = 7
    EVAL = 8


def make_rng(seed: int, stream: int, *index: int) -> np.random.Generator:
    """Philox generator keyed on (seed, stream, *index)."""
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32, int(stream), *map(int, index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Draw CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
