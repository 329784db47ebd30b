import json

import numpy as np
import pytest
import scipy.stats

from evalign.dataset_io import load_dataset, parse_poses
from evalign.events import AffineOmega, ConstOmega, LinearVel, packetize
from evalign.simulator import (
    SceneModel,
    SimulationError,
    generate_scene,
    motion_gyro,
    simulate_events,
    write_dataset,
)
from evalign.warp import warp_events


STATIC = ConstOmega(omega=np.zeros(3))


def point_scene(bearing, rate=3000.0, seed=0, polarity=1):
    b = np.asarray(bearing, dtype=np.float64)
    b = b / np.linalg.norm(b)
    return SceneModel(bearings=b[None, :], rates=[rate], polarities=[polarity],
                      seed=seed)


class TestGenerateScene:
    def test_shapes_and_ranges(self):
        scene = generate_scene(50, (300.0, 700.0), 0.4, seed=1)
        assert len(scene) == 50
        np.testing.assert_allclose(np.linalg.norm(scene.bearings, axis=1), 1.0,
                                   atol=1e-12)
        assert scene.rates.min() >= 300.0 and scene.rates.max() <= 700.0
        assert scene.bearings[:, 2].min() >= np.cos(0.4) - 1e-12

    def test_fov_zero_collapses_to_axis(self):
        scene = generate_scene(10, (100.0, 100.0), 0.0, seed=2)
        np.testing.assert_allclose(scene.bearings,
                                   np.tile([0.0, 0.0, 1.0], (10, 1)), atol=1e-12)

    def test_polarity_alternates(self):
        scene = generate_scene(6, (100.0, 200.0), 0.3, seed=3)
        np.testing.assert_array_equal(scene.polarities, [1, -1, 1, -1, 1, -1])

    def test_deterministic_in_seed(self):
        a = generate_scene(20, (100.0, 200.0), 0.3, seed=9)
        b = generate_scene(20, (100.0, 200.0), 0.3, seed=9)
        c = generate_scene(20, (100.0, 200.0), 0.3, seed=10)
        np.testing.assert_array_equal(a.bearings, b.bearings)
        assert not np.array_equal(a.bearings, c.bearings)

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_scene(0, (100.0, 200.0), 0.3, seed=0)
        with pytest.raises(ValueError):
            generate_scene(5, (0.0, 200.0), 0.3, seed=0)
        with pytest.raises(ValueError):
            SceneModel(bearings=[[0.0, 0.0, 2.0]], rates=[100.0],
                       polarities=[1], seed=0)


class TestSimulateEvents:
    def test_deterministic(self, camera):
        scene = generate_scene(40, (200.0, 500.0), 0.4, seed=7)
        a = simulate_events(scene, STATIC, 0.2, camera)
        b = simulate_events(scene, STATIC, 0.2, camera)
        assert a == b

    def test_sorted_times_and_polarity_values(self, camera):
        scene = generate_scene(40, (200.0, 500.0), 0.4, seed=7)
        ev = simulate_events(scene, STATIC, 0.2, camera)
        assert np.all(np.diff(ev.t) >= 0)
        assert set(np.unique(ev.polarity)) <= {0, 1}
        assert ev.t.min() >= 0.0 and ev.t.max() <= 0.2

    def test_rounded_coordinates_are_integral(self, camera):
        scene = generate_scene(30, (200.0, 500.0), 0.4, seed=7)
        ev = simulate_events(scene, STATIC, 0.1, camera, round_to_pixel=True)
        np.testing.assert_array_equal(ev.x, np.rint(ev.x))
        np.testing.assert_array_equal(ev.y, np.rint(ev.y))

    def test_total_count_within_poisson_bounds(self, camera):
        # centered scene so nothing is discarded: N ~ Poisson(sum(rates)*T)
        scene = generate_scene(30, (400.0, 800.0), 0.2, seed=5)
        T = 0.5
        mean = scene.rates.sum() * T
        ev = simulate_events(scene, STATIC, T, camera)
        assert abs(len(ev) - mean) < 4.0 * np.sqrt(mean)

    def test_single_point_count_poisson(self, camera):
        scene = point_scene([0.0, 0.0, 1.0], rate=5000.0, seed=21)
        ev = simulate_events(scene, STATIC, 1.0, camera)
        assert abs(len(ev) - 5000.0) < 4.0 * np.sqrt(5000.0)

    def test_times_uniform_chi2(self, camera):
        # homogeneous process: arrival times are uniform given the count
        scene = point_scene([0.0, 0.0, 1.0], rate=8000.0, seed=22)
        ev = simulate_events(scene, STATIC, 1.0, camera)
        counts, _ = np.histogram(ev.t, bins=10, range=(0.0, 1.0))
        expected = len(ev) / 10.0
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        # 9 degrees of freedom: far below the 0.999 quantile (27.9)
        assert chi2 < 27.9

    def test_merged_times_uniform_ks(self, camera):
        scene = generate_scene(25, (300.0, 900.0), 0.3, seed=23)
        ev = simulate_events(scene, STATIC, 0.4, camera)
        stat, p = scipy.stats.kstest(ev.t / 0.4, "uniform")
        assert p > 0.01

    def test_static_point_collapses_subpixel(self, camera):
        scene = point_scene([0.013, -0.007, 1.0], rate=2000.0, seed=24)
        ev = simulate_events(scene, STATIC, 0.5, camera, round_to_pixel=False)
        assert len(np.unique(ev.x)) == 1
        assert len(np.unique(ev.y)) == 1

    def test_static_scene_occupies_scene_points(self, camera):
        scene = generate_scene(15, (500.0, 900.0), 0.3, seed=25)
        ev = simulate_events(scene, STATIC, 0.3, camera, round_to_pixel=False)
        xy = np.unique(np.column_stack([ev.x, ev.y]), axis=0)
        assert len(xy) <= 15

    def test_off_sensor_scene_rejected(self, camera):
        # a bearing 1.2 rad off axis projects far outside a 240x180 sensor
        scene = point_scene([np.sin(1.2), 0.0, np.cos(1.2)], rate=1000.0, seed=26)
        with pytest.raises(SimulationError):
            simulate_events(scene, STATIC, 0.1, camera)

    def test_duration_validation(self, camera):
        scene = point_scene([0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            simulate_events(scene, STATIC, 0.0, camera)


class TestInverseMotionConsistency:
    """Warping simulated events by the generating motion must re-collapse them.

    Event placement inverts the warp at tau = t / duration, so warping back on
    that exact time base collapses every point to its t=0 position; leftover
    spread comes only from the bilinear ray-table interpolation.
    """

    def spread_after_warp(self, scene, motion, duration, camera, lut):
        ev = simulate_events(scene, motion, duration, camera,
                             round_to_pixel=False)
        xw, yw, valid = warp_events(ev.x, ev.y, ev.t / duration, motion,
                                    duration, lut)
        assert np.all(valid)
        return float(xw.max() - xw.min()), float(yw.max() - yw.min())

    def test_rotational_pinhole(self, camera, lut):
        scene = point_scene([0.05, -0.03, 1.0], rate=4000.0, seed=31)
        motion = ConstOmega(omega=[0.5, -0.3, 3.0])
        sx, sy = self.spread_after_warp(scene, motion, 0.3, camera, lut)
        assert sx < 3e-2 and sy < 3e-2

    def test_affine_pinhole(self, camera, lut):
        scene = point_scene([0.02, 0.04, 1.0], rate=4000.0, seed=32)
        motion = AffineOmega(omega0=[0.4, -0.2, 2.0], accel=[-0.8, 0.4, 2.5])
        sx, sy = self.spread_after_warp(scene, motion, 0.3, camera, lut)
        assert sx < 3e-2 and sy < 3e-2

    def test_linear_no_approach(self, camera, lut):
        scene = point_scene([0.01, 0.02, 1.0], rate=4000.0, seed=33)
        motion = LinearVel(v=[0.3, -0.2, 0.0])
        sx, sy = self.spread_after_warp(scene, motion, 0.4, camera, lut)
        assert sx < 3e-2 and sy < 3e-2

    def test_linear_with_approach(self, camera, lut):
        # the projective placement (u_a + t vx) / (1 + t vz) is the exact
        # inverse of the first-order flow, including vz != 0
        scene = point_scene([0.06, -0.05, 1.0], rate=4000.0, seed=34)
        motion = LinearVel(v=[0.2, 0.1, 0.5])
        sx, sy = self.spread_after_warp(scene, motion, 0.25, camera, lut)
        assert sx < 3e-2 and sy < 3e-2

    def test_rotational_distorted(self, distorted_camera, distorted_lut):
        # the forward distortion in the simulator must cancel against the
        # undistorting bearing table in the estimator warp
        scene = point_scene([0.04, 0.03, 1.0], rate=4000.0, seed=35)
        motion = ConstOmega(omega=[0.4, 0.2, 2.5])
        sx, sy = self.spread_after_warp(scene, motion, 0.3, distorted_camera,
                                        distorted_lut)
        assert sx < 5e-2 and sy < 5e-2

    def test_packet_anchored_warp_also_collapses(self, camera, lut):
        # the estimation pipeline normalizes tau over the packet span, which
        # shifts the anchor by the first event time; for a constant rate the
        # collapse survives to well under a tenth of a pixel
        scene = point_scene([0.05, -0.03, 1.0], rate=4000.0, seed=36)
        motion = ConstOmega(omega=[0.5, -0.3, 3.0])
        ev = simulate_events(scene, motion, 0.3, camera, round_to_pixel=False)
        (packet,) = packetize(ev, len(ev))
        xw, yw, valid = warp_events(packet.x, packet.y, packet.tau, motion,
                                    packet.duration, lut)
        assert np.all(valid)
        assert xw.max() - xw.min() < 0.1
        assert yw.max() - yw.min() < 0.1


class TestMotionGyro:
    def test_const(self):
        t = np.linspace(0, 1, 5)
        g = motion_gyro(ConstOmega(omega=[1.0, 2.0, 3.0]), t, 1.0)
        np.testing.assert_array_equal(g, np.tile([1.0, 2.0, 3.0], (5, 1)))

    def test_affine_ramp(self):
        t = np.array([0.0, 0.5, 1.0])
        g = motion_gyro(AffineOmega(omega0=[1.0, 0.0, 0.0],
                                    accel=[2.0, 0.0, 0.0]), t, 1.0)
        np.testing.assert_allclose(g[:, 0], [1.0, 2.0, 3.0])

    def test_linear_motion_has_zero_gyro(self):
        g = motion_gyro(LinearVel(v=[1.0, 2.0, 3.0]), np.array([0.0, 1.0]), 1.0)
        np.testing.assert_array_equal(g, np.zeros((2, 3)))


class TestWriteDataset:
    def test_round_trips_through_loader(self, tmp_path, camera):
        scene = generate_scene(40, (300.0, 800.0), 0.35, seed=41)
        motion = ConstOmega(omega=[0.3, -0.2, 2.0])
        written = write_dataset(tmp_path / "ds", scene, motion, 0.2, camera)
        events, cam, imu, poses = load_dataset(tmp_path / "ds")
        assert cam == camera
        assert len(events) == len(written)
        np.testing.assert_allclose(events.t, written.t, atol=1e-9)
        assert imu is not None and poses is not None

    def test_imu_covers_margin_and_matches_motion(self, tmp_path, camera):
        scene = generate_scene(30, (300.0, 800.0), 0.35, seed=42)
        motion = AffineOmega(omega0=[0.5, 0.0, 1.0], accel=[1.0, 0.0, -0.5])
        write_dataset(tmp_path / "ds", scene, motion, 0.2, camera)
        _, _, imu, _ = load_dataset(tmp_path / "ds")
        assert imu.t[0] <= -0.049
        assert imu.t[-1] >= 0.2 + 0.049
        i = int(np.argmin(np.abs(imu.t - 0.1)))
        expected = motion_gyro(motion, imu.t[i:i + 1], 0.2)[0]
        np.testing.assert_allclose(imu.gyro[i], expected, atol=1e-9)

    def test_rotational_poses_integrate_motion(self, tmp_path, camera):
        scene = generate_scene(30, (300.0, 800.0), 0.35, seed=43)
        omega = np.array([0.0, 0.0, 2.0])
        write_dataset(tmp_path / "ds", scene, ConstOmega(omega=omega), 0.25, camera)
        poses = parse_poses(tmp_path / "ds" / "groundtruth.txt")
        np.testing.assert_allclose(poses.position, 0.0, atol=1e-12)
        i = int(np.argmin(np.abs(poses.t - 0.2)))
        half = 0.5 * omega[2] * poses.t[i]
        np.testing.assert_allclose(poses.orientation[i],
                                   [0.0, 0.0, np.sin(half), np.cos(half)],
                                   atol=1e-9)

    def test_linear_poses_are_straight_line(self, tmp_path, camera):
        scene = generate_scene(30, (300.0, 800.0), 0.35, seed=44)
        v = np.array([0.2, -0.1, 0.3])
        write_dataset(tmp_path / "ds", scene, LinearVel(v=v), 0.25, camera)
        poses = parse_poses(tmp_path / "ds" / "groundtruth.txt")
        np.testing.assert_allclose(poses.position, poses.t[:, None] * v[None, :],
                                   atol=1e-12)
        np.testing.assert_allclose(poses.orientation,
                                   np.tile([0, 0, 0, 1.0], (len(poses), 1)),
                                   atol=1e-12)

    def test_meta_json(self, tmp_path, camera):
        scene = generate_scene(12, (300.0, 800.0), 0.35, seed=45)
        motion = ConstOmega(omega=[1.0, 0.0, 0.0])
        ev = write_dataset(tmp_path / "ds", scene, motion, 0.1, camera)
        meta = json.loads((tmp_path / "ds" / "meta.json").read_text())
        assert meta["motion"] == "const"
        assert meta["params"] == [1.0, 0.0, 0.0]
        assert meta["duration"] == 0.1
        assert meta["seed"] == 45
        assert meta["n_events"] == len(ev)

    def test_byte_identical_reruns(self, tmp_path, camera):
        scene = generate_scene(25, (300.0, 800.0), 0.35, seed=46)
        motion = ConstOmega(omega=[0.2, 0.1, 1.5])
        for d in ("a", "b"):
            write_dataset(tmp_path / d, scene, motion, 0.15, camera)
        for name in ("events.txt", "calib.txt", "imu.txt", "groundtruth.txt",
                     "meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()
