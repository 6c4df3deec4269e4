from dataclasses import replace

import numpy as np
import pytest

from cssr.degradation import DegradationParams, degrade, synthetic_images
from cssr.trainer import TrainConfig

TOY_NET = dict(arch="durcan-6_s", channels=8, gen_channels=(8, 8, 8), disc_channels=8, disc_hidden=32)


def toy_pairs(n=4, size=96, seed=0):
    """Synthetic HR images and their simulated LR captures, float32 HxWx3 in [0, 1]."""
    p = DegradationParams(seed=seed)
    pairs = []
    for i, hr in enumerate(synthetic_images(n, size, seed=seed)):
        lr = degrade(hr, replace(p, seed=seed + i))
        pairs.append((hr.astype(np.float32) / 255.0, lr.astype(np.float32) / 255.0))
    return pairs


def toy_config(**overrides) -> TrainConfig:
    kw = dict(TOY_NET, crop=12, batch=4, lr=1e-3, max_iters=500)
    kw.update(overrides)
    return TrainConfig(**kw)


@pytest.fixture(scope="session")
def toy_dataset():
    return toy_pairs()
