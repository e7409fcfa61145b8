# tests/conftest.py
# Shared fixtures: seeded generators, a small summary network and random datasets.

import numpy as np
import pytest

from models.configs import SummaryConfig
from models.dataset import HierarchicalDataset
from services.summary_net import build_network


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def small_summary():
    return SummaryConfig(
        level1_modules=1,
        level2_modules=1,
        hidden_width=8,
        hidden_layers=2,
        group_embedding_dim=6,
        summary_dim=6,
        head_width=8,
        head_layers=2,
    )


@pytest.fixture
def small_network(small_summary, rng):
    """Returns a factory: (input_dim, n_models) -> NetworkParams."""

    def make(input_dim: int = 2, n_models: int = 3):
        return build_network(small_summary, input_dim, n_models, rng)

    return make


def random_dataset(rng, n_groups: int = 4, low: int = 2, high: int = 7, dim: int = 2) -> HierarchicalDataset:
    sizes = rng.integers(low, high + 1, size=n_groups)
    return HierarchicalDataset(groups=[rng.normal(size=(n, dim)) for n in sizes])


@pytest.fixture
def make_dataset(rng):
    def make(n_groups: int = 4, low: int = 2, high: int = 7, dim: int = 2) -> HierarchicalDataset:
        return random_dataset(rng, n_groups, low, high, dim)

    return make
