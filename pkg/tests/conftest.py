import numpy as np
import pytest

from treepoison.config import ExperimentConfig
from treepoison.dataset import Dataset
from treepoison.harness import load_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def breast_cancer() -> Dataset:
    return load_dataset(ExperimentConfig())[0]


def make_dataset(rng, n, d, ties=False, noise=0.7) -> Dataset:
    X = rng.integers(0, 4, size=(n, d)).astype(float) if ties else rng.normal(size=(n, d))
    y = np.where(X @ rng.normal(size=d) + rng.normal(scale=noise, size=n) > 0, 1, -1)
    if np.all(y == y[0]):
        y[0] = -y[0]
    return Dataset(X, y)


def two_sided_region() -> Dataset:
    """Region left{4+,1-}, right{2+,4-} on one feature; the boundary split is (0, 0.0)."""
    x = [0.0] * 5 + [1.0] * 6
    y = [1, 1, 1, 1, -1] + [1, 1, -1, -1, -1, -1]
    return Dataset(np.array(x).reshape(-1, 1), y)
