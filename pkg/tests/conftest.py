import numpy as np
import pytest

from bottleneck_servo.geometry import CameraIntrinsics, Pose, so3_exp


def random_rotation(rng, max_angle=np.pi * 0.95):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def random_pose(rng, max_angle=np.pi * 0.95, scale=1.0):
    return Pose.from_rt(random_rotation(rng, max_angle), rng.uniform(-scale, scale, 3))


@pytest.fixture
def intr():
    return CameraIntrinsics(600.0, 600.0, 424.0, 240.0, 848, 480)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
