import numpy as np
import pytest

from medpnet.geometry import PointCloud, RigidTransform


def random_rotation(rng, max_angle_deg=180.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg))
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(axis * angle).as_matrix()


def random_transform(rng, max_angle_deg=180.0, max_translation=1.0):
    R = random_rotation(rng, max_angle_deg)
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(R, t)


def random_cloud(rng, n=100, unit="millimeters", scale=1.0):
    return PointCloud(rng.normal(scale=scale, size=(n, 3)), unit=unit)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
