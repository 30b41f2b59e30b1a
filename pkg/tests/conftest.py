import numpy as np
import pytest

from domenet.data import Dataset, make_blobs
from domenet.network import build_network
from domenet.training import OptimizerState, TrainConfig, train


def blobs_dataset(seed=0, n_classes=3, per_class=200, spread=0.04):
    x_train, y_train = make_blobs(n_classes, per_class, spread, seed=[seed, 0])
    x_test, y_test = make_blobs(n_classes, per_class // 2, spread, seed=[seed, 1])
    return Dataset(x_train, y_train, x_test, y_test)


def train_blobs_model(head, seed=0, epochs=12, fat=None, n_classes=3):
    data = blobs_dataset(seed=seed, n_classes=n_classes)
    net = build_network("mlp", head, n_classes, input_shape=(2,), seed=seed)
    opt = OptimizerState(lr_max=0.1, momentum=0.9, weight_decay=0.0005)
    cfg = TrainConfig(epochs=epochs, batch_size=64, seed=seed, fat=fat)
    history = train(net, data, opt, cfg)
    return net, data, history


@pytest.fixture(scope="session")
def blobs_mdome():
    net, data, history = train_blobs_model("mdome")
    assert history[-1]["test_acc"] > 0.95, "fixture model failed to train"
    return net, data


@pytest.fixture(scope="session")
def blobs_softmax():
    net, data, history = train_blobs_model("softmax")
    assert history[-1]["test_acc"] > 0.95, "fixture model failed to train"
    return net, data


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
