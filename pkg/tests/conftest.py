import os

import numpy as np
import pytest
import torch

os.environ.setdefault("TDMCL_THREADS", "1")
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**overrides):
    """A desk-scale-but-fast config for protocol/IO tests (not for metrics)."""
    from tdmcl.config import RunConfig

    base = dict(
        suite_train_size=48,
        suite_test_size=24,
        train_epochs=1,
        train_burst_epochs=1,
        train_batch_size=24,
        evolution_episodes=2,
        plasticity_probe_size=24,
        run_tasks=3,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def make_tiny_config():
    return tiny_config
