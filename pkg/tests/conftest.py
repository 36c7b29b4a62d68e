from __future__ import annotations

import numpy as np
import pytest

from vbcalib.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_fh_dataset(rng: np.random.Generator, n: int = 3, p_x: int = 2) -> Dataset:
    return Dataset(
        domain_id=np.arange(1, n + 1),
        y=rng.normal(size=n),
        v=rng.uniform(0.5, 2.0, size=n),
        n=np.ones(n, dtype=int),
        x=rng.normal(size=(n, p_x)),
        z=np.empty((n, 0)),
    )


def random_fhv_dataset(rng: np.random.Generator, n: int = 3, p_x: int = 2, p_z: int = 2) -> Dataset:
    return Dataset(
        domain_id=np.arange(1, n + 1),
        y=rng.normal(size=n),
        v=rng.uniform(0.5, 2.0, size=n),
        n=rng.integers(2, 50, size=n),
        x=rng.normal(size=(n, p_x)),
        z=np.column_stack([np.ones(n), rng.normal(size=(n, p_z - 1))]),
    )
