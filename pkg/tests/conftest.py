import numpy as np
import pytest

from sslmix import CanonicalTwoClass, MixtureParams
from sslmix.rng import stream


@pytest.fixture
def canonical2():
    """Canonical two-class model with separation 2 in one dimension."""
    return CanonicalTwoClass(2.0, p=1).to_mixture()


def random_mixture(rng: np.random.Generator, g: int, p: int) -> MixtureParams:
    """A well-conditioned random mixture for fuzz tests."""
    w = rng.uniform(0.5, 1.5, g)
    w /= w.sum()
    means = rng.normal(0.0, 3.0, (g, p))
    covs = np.empty((g, p, p))
    for i in range(g):
        a = rng.normal(0.0, 0.6, (p, p))
        covs[i] = a @ a.T + (0.5 + rng.uniform()) * np.eye(p)
    return MixtureParams(w, means, covs)


def fuzz_rng(*key) -> np.random.Generator:
    return stream(7041, *key)
