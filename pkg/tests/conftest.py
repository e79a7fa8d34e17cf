"""Shared fixtures: a small blob dataset and a classifier trained on it.

Both are session-scoped because several test modules only need *some*
reasonably trained network and *some* separable data; tests that depend on
specific numbers build their own nets inline.
"""

import numpy as np
import pytest

from lidkit.harness.config import parse_layers
from lidkit.harness.data import gen_synthetic
from lidkit.microgradnet import SgdConfig, train_sgd


@pytest.fixture(scope="session")
def blob_data():
    return gen_synthetic("gaussian_blobs", 240, seed=5, classes=2, dim=2,
                         spread=0.08)


@pytest.fixture(scope="session")
def blob_net(blob_data):
    """Five activation levels: input, dense, relu, dense, softmax."""
    specs = parse_layers("dense:8,relu,dense:2,softmax", 2)
    return train_sgd(blob_data.features[:200], blob_data.labels[:200], specs,
                     SgdConfig(epochs=30, learning_rate=0.3, batch_size=16,
                               seed=0))


@pytest.fixture(scope="session")
def blob_holdout(blob_data):
    """(features, labels) slice the network never trained on."""
    return blob_data.features[200:], blob_data.labels[200:]


@pytest.fixture(scope="session")
def moons_data():
    return gen_synthetic("two_moons", 200, seed=3, noise=0.1, ambient_dim=6)


@pytest.fixture(scope="session")
def moons_net(moons_data):
    specs = parse_layers("dense:12,relu,dense:2,softmax", 6)
    return train_sgd(moons_data.features[:160], moons_data.labels[:160], specs,
                     SgdConfig(epochs=40, learning_rate=0.3, batch_size=16,
                               seed=1))


@pytest.fixture(scope="session")
def moons_holdout(moons_data):
    return moons_data.features[160:], moons_data.labels[160:]
