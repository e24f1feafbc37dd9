import numpy as np
import pytest

from audiocap.model import ModelConfig

# Small configuration used across tests: short sequences, four-word
# vocabulary, three caption steps.
TINY_CONFIG = ModelConfig(
    n_feats=3,
    encoder_hidden=(2, 2, 3),
    decoder_hidden=(3, 6),
    vocab_size=4,
    caption_steps=3,
    seq_len=5,
)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return TINY_CONFIG


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
