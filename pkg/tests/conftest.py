import numpy as np
import pytest

from trackadv.geometry import Box3D


def random_box(rng, center_scale=1.5, size_range=(0.5, 3.0)) -> Box3D:
    center = rng.uniform(-center_scale, center_scale, size=3)
    size = rng.uniform(*size_range, size=3)
    yaw = rng.uniform(-np.pi, np.pi)
    return Box3D(center, size, yaw)


def random_cloud(rng, n, scale=2.0) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
