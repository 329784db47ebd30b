import math

import numpy as np
import pytest

from evalign.events import CameraModel, ConstOmega, packetize
from evalign.iwe import CanvasGeometry
from evalign.simulator import generate_scene, simulate_events
from evalign.warp import build_bearing_lut

DEG = math.pi / 180.0


@pytest.fixture(scope="session")
def camera():
    return CameraModel(fx=200.0, fy=200.0, cx=120.0, cy=90.0, width=240, height=180)


@pytest.fixture(scope="session")
def distorted_camera():
    return CameraModel(fx=199.0, fy=198.0, cx=122.0, cy=92.0, width=240, height=180,
                       k1=-0.2, k2=0.05, p1=0.001, p2=-0.0005, k3=0.01)


@pytest.fixture(scope="session")
def lut(camera):
    return build_bearing_lut(camera)


@pytest.fixture(scope="session")
def distorted_lut(distorted_camera):
    return build_bearing_lut(distorted_camera)


@pytest.fixture(scope="session")
def small_geom(camera):
    # small padding keeps unit-test canvases cheap
    return CanvasGeometry(sensor_width=camera.width, sensor_height=camera.height, pad=20)


@pytest.fixture(scope="session")
def rot_packet(camera):
    """A ~6k-event packet from a rotating synthetic scene (shared, read-only)."""
    scene = generate_scene(150, (300.0, 700.0), 0.4, seed=42)
    omega = np.array([10.0, -15.0, 120.0]) * DEG
    events = simulate_events(scene, ConstOmega(omega), 0.1, camera)
    packet = packetize(events, 6000)[0]
    return packet, omega
