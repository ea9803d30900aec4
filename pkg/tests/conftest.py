import numpy as np
import pytest

from pacedrank.core import EmbeddingParams, ImportanceVector, build_tetrads, validate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_dataset(rng, n=6, p=5, q=4):
    return validate_dataset(rng.standard_normal((n, p)), rng.standard_normal((n, q)))


def random_params(rng, d=3, p=5, q=4, scale=0.5):
    return EmbeddingParams.from_arrays(
        rng.standard_normal((d, p)) * scale,
        rng.standard_normal(d) * 0.1,
        rng.standard_normal((d, q)) * scale,
        rng.standard_normal(d) * 0.1,
    )


def random_instance(seed, n=6, p=5, q=4, d=3):
    """Dataset, params, full tetrads, and uniform-random weights."""
    rng = np.random.default_rng(seed)
    dataset = random_dataset(rng, n, p, q)
    params = random_params(rng, d, p, q)
    tetrads = build_tetrads(dataset)
    v = ImportanceVector(rng.uniform(0.0, 1.0, tetrads.total), tetrads.offsets)
    return dataset, params, tetrads, v
