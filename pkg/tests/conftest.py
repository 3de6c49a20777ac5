import json
from pathlib import Path

import numpy as np
import pytest

from diffgap import make_circle_dataset, make_schedule

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"


def load_config(name):
    with open(CONFIG_DIR / name) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def default_circle():
    return make_circle_dataset(16, 12.0, "symmetric", seed=0)


@pytest.fixture(scope="session")
def random_circle():
    return make_circle_dataset(16, 12.0, "random", seed=7)


@pytest.fixture(scope="session")
def default_schedule():
    return make_schedule(0.002, 28.0, 7.0, 32)


class NearestPointStub:
    """Test denoiser mapping every input to the nearest stored point."""

    def __init__(self, points):
        self.points_ = np.asarray(points, dtype=float)

    def fit(self, X, y=None):
        return self

    def predict(self, X, sigma):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d2 = np.sum((X[:, None, :] - self.points_[None, :, :]) ** 2, axis=-1)
        return self.points_[np.argmin(d2, axis=1)]


class IdentityStub:
    """Test denoiser returning its input unchanged (zero drift)."""

    points_ = None

    def fit(self, X, y=None):
        return self

    def predict(self, X, sigma):
        return np.atleast_2d(np.asarray(X, dtype=float)).copy()


class ZeroStub:
    """Test denoiser predicting the origin everywhere."""

    points_ = None

    def fit(self, X, y=None):
        return self

    def predict(self, X, sigma):
        return np.zeros_like(np.atleast_2d(np.asarray(X, dtype=float)))
