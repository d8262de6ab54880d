import numpy as np
import pytest

from redunet import BuildConfig, build_redunet
from redunet.datasets import synth_subspace_mixture


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_psd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T) / d


@pytest.fixture(scope="session")
def small_model():
    """A 6-layer model on well-separated synthetic data (d=12, 3 classes)."""
    X, pi = synth_subspace_mixture(12, 3, 2, 40, 0.02, seed=7)
    model, trace = build_redunet(X, pi, BuildConfig(epsilon=0.5, depth=6))
    return model, trace, X, pi
