import numpy as np
import pytest

from poseinit.geometry import CameraModel, RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion, scalar-first."""
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng: np.random.Generator, t_scale: float = 500.0, z_offset: float = 1500.0) -> RigidTransform:
    """Random pose placing the target frame origin in front of the camera."""
    t = rng.uniform(-1, 1, size=3) * np.array([t_scale, t_scale, 0.3 * t_scale])
    t[2] += z_offset
    return RigidTransform(random_rotation(rng), t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench_camera():
    """1920x1080 sensor, focal length from a 110 deg horizontal field of view."""
    fx = 960.0 / np.tan(np.radians(55.0))
    return CameraModel(fx=fx, fy=fx, cx=960.0, cy=540.0, width=1920, height=1080)
