import numpy as np
import pytest

from sumskip import archs, modelio, training


@pytest.fixture(scope="session")
def blob3() -> modelio.Dataset:
    """Well-separated 3-class blobs in 8 dimensions."""
    return modelio.gen_blobs(seed=11, n_samples=240, dims=8, n_classes=3, spread=0.5)


@pytest.fixture(scope="session")
def mlp_model(blob3) -> "modelio.Model":
    """A small trained MLP (8 -> 16 -> 3)."""
    arch = archs.parse_arch("mlp:8-16-3")
    cfg = training.TrainCfg(seed=0, lr=0.1, batch_size=32, epochs=6)
    return training.train(arch, blob3, cfg)


@pytest.fixture(scope="session")
def cnn_arch():
    return archs.parse_arch("cnn:2x8x8:c6k3,bn,r,c5k3,bn,r,gap,h3")


@pytest.fixture(scope="session")
def cnn_model(cnn_arch) -> "modelio.Model":
    """An untrained small CNN with batchnorm (geometry checks only need weights)."""
    return training.init_model(cnn_arch, seed=4)


def random_model(seed: int, arch_text: str = "mlp:10-12-4") -> "modelio.Model":
    return training.init_model(archs.parse_arch(arch_text), seed=seed)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
