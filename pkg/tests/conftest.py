import numpy as np
import pytest
import torch

from hybridsplat.scene import Camera, init_synthetic

torch.set_num_threads(1)


def axis_camera(size=16, f=20.0, z_eye=0.0):
    """Camera at the origin looking down +z, principal point on a pixel center."""
    c = size / 2.0 + 0.5
    return Camera(f, f, c, c, size, size, np.eye(3), np.array([0.0, 0.0, -z_eye]))


@pytest.fixture
def small_scene():
    return init_synthetic(dict(count=200, size=0.6, face_res=8, seed=3))


@pytest.fixture
def orbit_camera():
    return Camera.look_at((0.0, -2.5, 0.6), (0.0, 0.0, 0.0), width=24, height=24)
