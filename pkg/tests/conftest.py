import os
from pathlib import Path

import numpy as np
import pytest

from nrnn.data import SequenceDataset
from nrnn.sde import ModelParams, NoiseConfig


def random_params(seed, d_h=3, d_x=2, d_y=2, scale=0.4, act="tanh"):
    rng = np.random.default_rng(seed)
    return ModelParams(
        A=scale * rng.standard_normal((d_h, d_h)),
        W=scale * rng.standard_normal((d_h, d_h)),
        U=rng.standard_normal((d_h, d_x)),
        b=0.3 * rng.standard_normal(d_h),
        V=rng.standard_normal((d_y, d_h)),
        activation=act,
    )


@pytest.fixture
def small_params():
    return random_params(0)


@pytest.fixture
def mixed_noise():
    return NoiseConfig(epsilon=0.2, sigma1=0.8, sigma2=0.5)


_MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz"),
}


def find_mnist() -> dict | None:
    """Locate MNIST IDX files under $NRNN_MNIST_DIR or ./data/mnist."""
    roots = []
    if os.environ.get("NRNN_MNIST_DIR"):
        roots.append(Path(os.environ["NRNN_MNIST_DIR"]))
    roots.append(Path(__file__).resolve().parent.parent / "data" / "mnist")
    for root in roots:
        found = {}
        for key, names in _MNIST_FILES.items():
            for name in names:
                if (root / name).exists():
                    found[key] = str(root / name)
                    break
        if len(found) == len(_MNIST_FILES):
            return found
    return None


def digits_sequences(n_train=1000, n_test=500):
    """Offline 8x8 digit images as length-64 pixel sequences."""
    pytest.importorskip("sklearn")
    from sklearn.datasets import load_digits
    bunch = load_digits()
    inputs = bunch.images.reshape(-1, 64, 1) / 16.0
    labels = bunch.target
    order = np.random.default_rng(0).permutation(len(inputs))
    meta = {"name": "digits", "M": 64, "d_x": 1, "d_y": 10,
            "value_range": (0.0, 1.0)}
    train = SequenceDataset(inputs[order[:n_train]], labels[order[:n_train]], meta)
    test = SequenceDataset(inputs[order[n_train:n_train + n_test]],
                           labels[order[n_train:n_train + n_test]], meta)
    return train, test
