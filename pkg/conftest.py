import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_square():
    """Three small square houses (two train, one test) with three scenarios each."""
    from lib.datasets import DatasetConfig, generate_dataset
    config = DatasetConfig(houses=3, scenarios=3, train_houses=2, oracle_resolution=12, interior_samples=8,
                           source_samples=4, boundary_samples=4, train_queries=6, test_queries=6)
    return generate_dataset(config, seed=0)


@pytest.fixture
def tiny_gen_spec():
    from lib.gen_model import GenSpec
    return GenSpec(input_dims=(3, 3), output_dims=(1,), latent_dim=8, message_dim=4, encoder_hidden=8,
                   decoder_hidden=8, edge_hidden=8, node_hidden=8)


@pytest.fixture(scope="session")
def tiny_global():
    """Three houses of the integral-regression task, one scalar target per scenario."""
    from lib.datasets import DatasetConfig, generate_dataset
    config = DatasetConfig(task='global', houses=3, scenarios=2, train_houses=2, oracle_resolution=12,
                           global_inputs=16)
    return generate_dataset(config, seed=0)
