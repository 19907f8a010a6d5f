import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advbias.data import Dataset  # noqa: E402


def random_dataset(rng, n, d, group_col=True, name="rand"):
    """Random dataset; with ``group_col`` the group is also the last feature."""
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n)
    s = rng.integers(0, 2, n)
    if group_col:
        X = np.hstack([X, s[:, None].astype(float)])
    return Dataset(X, y, s, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
