import os
from pathlib import Path

import numpy as np
import pytest

from bika.datasets_io import Dataset, save_mnist_idx


def synth_classification_data(n: int, seed: int, size: int = 28) -> Dataset:
    """Ten noisy class templates at MNIST geometry; learnable in a few epochs.

    Templates are fixed so draws with different seeds share one task; the
    seed only controls which samples (labels + pixel noise) are drawn.
    """
    template_rng = np.random.default_rng(12345)
    templates = (template_rng.random((10, 1, size, size)) < 0.5) * np.int16(255)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    noise = rng.integers(-60, 61, (n, 1, size, size))
    images = np.clip(templates[labels] + noise, 0, 255).astype(np.uint8)
    return Dataset(images, labels.astype(np.int64))


def write_mnist_dir(root: Path, train: Dataset, test: Dataset) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    save_mnist_idx(train, root / "train-images-idx3-ubyte",
                   root / "train-labels-idx1-ubyte")
    save_mnist_idx(test, root / "t10k-images-idx3-ubyte",
                   root / "t10k-labels-idx1-ubyte")
    return root


def real_mnist_dir():
    """Directory with the real MNIST IDX files, if the environment has one."""
    candidates = [os.environ.get("BIKA_MNIST_DIR"), "data/mnist", "data"]
    for cand in candidates:
        if not cand:
            continue
        p = Path(cand)
        if (p / "train-images-idx3-ubyte").is_file():
            return p
    return None


@pytest.fixture
def synth_mnist_dir(tmp_path):
    train = synth_classification_data(120, seed=1)
    test = synth_classification_data(40, seed=2)
    return write_mnist_dir(tmp_path / "mnist", train, test)
