import numpy as np
import pytest

from purerep.data import SeriesDataset, SplitSpec
from purerep.synthetic import SynthSpec, generate


def synthetic_dataset(seed: int = 0, length: int = 1000) -> SeriesDataset:
    data = generate(SynthSpec(length=length), np.random.default_rng(seed))
    names = [f"trend{i}_period{j}" for i, j in data.labels()]
    return SeriesDataset.from_array(data.matrix(), names, SplitSpec("ratios", 1.0, 0.0, 0.0), name="synthetic")


@pytest.fixture(scope="session")
def synth_ds():
    return synthetic_dataset()
