import numpy as np
import pytest

from prompt_dqa.encoder import ModelConfig, init_backbone
from prompt_dqa.synth import build_dataset


TOY = dict(n_layers=2, d_model=16, n_heads=2, d_mlp=32, prompt_len=4, d_prompt=16,
           image_side_local=16, image_side_global=32)


@pytest.fixture(scope="session")
def toy_config() -> ModelConfig:
    return ModelConfig(**TOY)


@pytest.fixture(scope="session")
def toy_backbone(toy_config):
    return init_backbone(toy_config, seed=0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Five scenes x four dehazers at 32 px; cheap enough for per-test training."""
    root = tmp_path_factory.mktemp("tiny")
    records = build_dataset(5, 4, root, seed=3, side=32)
    return root, records


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
