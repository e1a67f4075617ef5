from __future__ import annotations

import numpy as np
import pytest

import sigwatch as sw
from sigwatch import synth

SMALL_HIDDEN = (32, 16)
SMALL_KNOWN = 4


@pytest.fixture(scope="session")
def small_dataset() -> sw.Dataset:
    """4 known + 4 abnormal emitters, 40 bursts each, snr 25 dB."""
    return sw.make_dataset(SMALL_KNOWN, 4, 40, seed=5, snr_db=25.0)


@pytest.fixture(scope="session")
def trained_pair(small_dataset):
    """Small dense-head and cosine-head networks trained on the same split."""
    x_train, y_train = small_dataset.train_arrays()
    cfg = sw.TrainConfig(learning_rate=0.05, epochs=40, batch_size=32, seed=5)
    nets = {}
    for head in ("dense", "zero_bias"):
        net = sw.build_network(synth.FEATURE_DIM, SMALL_HIDDEN, SMALL_KNOWN, head=head, seed=5)
        sw.train(net, x_train, y_train, cfg)
        nets[head] = net
    return nets


@pytest.fixture()
def blobs():
    """Two separable 2-D Gaussian blobs."""
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-2.0, 1.0, size=(100, 2)), rng.normal(2.0, 1.0, size=(100, 2))])
    y = np.array([0] * 100 + [1] * 100)
    return x, y
