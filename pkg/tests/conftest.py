import numpy as np
import pytest

from semindex import DatasetBundle, SyntheticConfig, synth_dataset


@pytest.fixture(scope="session")
def small_ds():
    return synth_dataset(SyntheticConfig(n_db=1500, n_queries=30, seed=3))


@pytest.fixture(scope="session")
def small_bundle(small_ds):
    return DatasetBundle.from_synthetic(small_ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
