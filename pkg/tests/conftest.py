from __future__ import annotations

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixtures_dir() -> str:
    return os.path.abspath(FIXTURES)


def random_lut(rng: np.random.Generator, dim: int, dtype=np.float32):
    from nlut.lut3d import Lut3D

    entries = rng.uniform(-0.25, 1.25, size=(3, dim, dim, dim)).astype(dtype)
    return Lut3D(dim, entries)
