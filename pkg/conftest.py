"""
Shared fixtures: tiny models and toy inputs
"""

import numpy as np
import pytest

from config_env import TrainingConfig
from data_io import DatasetRecord, Vocabulary
from params import ModelConfig, ModelParams, parameter_shapes


def random_params(config: ModelConfig, seed: int = 0, scale: float = 0.5) -> ModelParams:
    """Every tensor, biases included, drawn from N(0, scale)"""
    rng = np.random.default_rng(seed)
    return ModelParams(config, {
        name: rng.normal(0.0, scale, size=shape) for name, shape in parameter_shapes(config).items()
    })


def tiny_config(**overrides) -> ModelConfig:
    values = dict(feature_dim=3, vocab_size=5, hidden=3, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values)


def toy_vocab(words=("a", "b", "c", "d", "e")) -> Vocabulary:
    return Vocabulary(["<pad>", "<bos>", "<eos>"] + list(words))


@pytest.fixture
def make_params():
    def factory(seed: int = 0, scale: float = 0.5, **overrides) -> ModelParams:
        return random_params(tiny_config(**overrides), seed=seed, scale=scale)
    return factory


@pytest.fixture
def features():
    return np.random.default_rng(42).normal(size=(2, 3))


@pytest.fixture
def vocab():
    return toy_vocab()


@pytest.fixture
def toy_training_config():
    return TrainingConfig(
        lr=1e-2, batch_size=2, max_len=4, dropout=0.0, hidden=3, seed=3,
        max_epochs=2, patience=10, step2_epochs=2, clip_norm=None,
    )


@pytest.fixture
def toy_records():
    rng = np.random.default_rng(7)
    return [
        DatasetRecord("v0", rng.normal(size=(2, 3)), [["a", "b"], ["a", "c"]]),
        DatasetRecord("v1", rng.normal(size=(3, 3)), [["d", "e", "a"]]),
        DatasetRecord("v2", rng.normal(size=(2, 3)), [["c"]]),
    ]
