import numpy as np
import pytest

import semicount as sc

TINY_MODEL = sc.ModelConfig(stage_channels=(8, 16, 24, 32), reg_channels=(32, 16), cls_channels=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return TINY_MODEL


def make_scene(seed=0, size=128, count_range=(5, 20), **kwargs):
    spec = sc.SceneSpec(size=size, count_range=count_range, **kwargs)
    return sc.gen_scene(spec, np.random.default_rng(seed), scene_id=f"scene_{seed:03d}")


@pytest.fixture
def scene():
    return make_scene()
