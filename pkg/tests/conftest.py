import numpy as np
import pytest

from osadas.backend import OracleRegionModel, ToyLinearBackend

REGION = (96, 96, 32, 32)  # top-left row, col, height, width


@pytest.fixture
def oracle():
    return OracleRegionModel(REGION, (224, 224, 3), k=64, classes=10, seed=0)


@pytest.fixture
def oracle_image():
    return np.random.default_rng(0).random((224, 224, 3))


@pytest.fixture
def small_linear():
    return ToyLinearBackend.random((16, 16, 3), k=8, seed=1, classes=4)


def random_basis(rng, k, d):
    q, _ = np.linalg.qr(rng.normal(size=(k, d)))
    return q
