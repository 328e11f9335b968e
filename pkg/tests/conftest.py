import numpy as np
import pytest

from clicklift import synthgen


@pytest.fixture(scope="session")
def small_scene():
    """One-frame scene with all three classes, shared by read-only tests."""
    spec = synthgen.random_scene_spec(seed=3, n_instances=6, num_frames=1)
    return synthgen.generate_sequence(spec)


@pytest.fixture(scope="session")
def wall_scene():
    spec = synthgen.random_scene_spec(seed=11, n_instances=6, num_frames=1, with_wall=True)
    return synthgen.generate_sequence(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng):
    """Random valid rigid transform (orthonormal rotation, det +1)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = rng.uniform(-50, 50, size=3)
    return pose
