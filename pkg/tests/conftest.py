import os
import sys

import numpy as np
import pytest

os.environ.setdefault('MISSPEC_ENV', 'testing')
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from misspec.measures import default_grid, normal_density  # noqa: E402


@pytest.fixture
def standard_normal():
    return normal_density(0.0, 1.0)


@pytest.fixture
def shifted_normal():
    return normal_density(1.0, 1.0)


@pytest.fixture(scope='session')
def grid():
    return default_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(20040101)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / 'out')
