import numpy as np
import pytest

from headfit.modelgen import ModelGenConfig, build_desk_model
from headfit.synth import SynthConfig, make_dataset


@pytest.fixture(scope="session")
def small_model():
    """Compact model for gradient checks: N below 300, few landmarks."""
    return build_desk_model(ModelGenConfig(rings=12, segments=16, n_shape=10,
                                           n_expr=5, static_landmarks=16,
                                           contour_landmarks=9, seed=7))


@pytest.fixture(scope="session")
def desk_model():
    return build_desk_model(ModelGenConfig(seed=0))


@pytest.fixture(scope="session")
def tiny_dataset(small_model):
    return make_dataset(small_model, SynthConfig(identities=4, per_identity=6,
                                                 seed=11))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
