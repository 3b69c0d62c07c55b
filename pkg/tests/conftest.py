"""Shared fixtures.

NUMBA_NUM_THREADS is pinned before anything imports numba: the thread-count
invariance tests need at least 2 workers, and numba sizes its pool from the
CPU count at import time (1 on small CI boxes).
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "2")

import numpy as np
import pytest

from glyconet.domain import GlucoseSeries


@pytest.fixture
def grid_series():
    """Factory for a gridded series from a plain list of values."""

    def build(values, subject_id="s1", t0=0, rate=5):
        values = np.asarray(values, dtype=np.float64)
        offsets = np.arange(values.size, dtype=np.int64) * rate
        return GlucoseSeries(subject_id=subject_id, t0=t0, offsets=offsets,
                             values=values, rate=rate)

    return build


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=[1234, 0]))
