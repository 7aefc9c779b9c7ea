import numpy as np
import pytest

from leansearch.configs import Config, MlpArch, TrainingHP
from leansearch.spaces import (
    cnn_stage1_space,
    map_unit_sample,
    mlp_stage1_space,
    mlp_stage1_space_large,
    training_space,
    unit_dim,
)


@pytest.fixture
def cnn_space():
    return cnn_stage1_space()


@pytest.fixture
def mlp_space():
    return mlp_stage1_space()


@pytest.fixture
def mlp_space_large():
    return mlp_stage1_space_large()


@pytest.fixture
def stage3_space():
    return training_space()


REFERENCE_MLP = MlpArch(hidden_nodes=(100,), drop_prob=0.2)


def sample_config(space, rng: np.random.Generator) -> Config:
    """Random legal config of the space (training samples get a fixed arch)."""
    sample = map_unit_sample(space, rng.random(unit_dim(space)))
    if space.family == "training":
        return Config(arch=REFERENCE_MLP, training=sample)
    return Config(arch=sample, training=TrainingHP(eta=1e-3, lam=0.0, batch_size=256))


@pytest.fixture
def make_configs():
    def _make(space, n, seed=0):
        rng = np.random.default_rng(seed)
        return [sample_config(space, rng) for _ in range(n)]

    return _make
