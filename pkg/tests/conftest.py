import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.models import ModelConfig, SynthConfig
from consent.modules.blocks import Sequence, collate
from consent.modules.network import ConsentModel
from consent.services import synth_data

TINY_MODEL = dict(block_height=16, block_width=12, channels=1, embed_dim=8, num_heads=2,
                  num_stacks=2, ffn_hidden=16, max_seq_len=10)
TINY_SYNTH = dict(images=6, words_mean=4.0, words_std=2.0, words_min=2, words_max=6,
                  glyphs_per_word=(3, 4), base_stroke_range=(1.0, 2.0), bold_ratio=0.3)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_config):
    return ConsentModel.initialize(tiny_config)


def randomize(model, seed=1, scale=0.3):
    """Random values for every parameter, biases included, so no activation sits on a ReLU kink."""
    rng = np.random.default_rng(seed)
    for param in model.parameters().values():
        param.data = rng.normal(0.0, scale, param.shape)
    return model


def random_batch(config, lengths, seed=0, pad_to=None):
    rng = np.random.default_rng(seed)
    sequences = []
    for i, n in enumerate(lengths):
        blocks = rng.uniform(0.0, 1.0, (n, config.channels, config.block_height, config.block_width))
        sequences.append(Sequence(blocks, rng.integers(0, 2, n), [(f"img{i}", j) for j in range(n)], f"img{i}"))
    return collate(sequences, pad_to)


@pytest.fixture
def tiny_synth_config():
    return SynthConfig.noiseless(**TINY_SYNTH)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_synth_config):
    out = tmp_path / 'data'
    synth_data.generate_dataset(tiny_synth_config, str(out))
    return str(out)
