import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evalign.dataset_io import (
    ParseError,
    PoseSample,
    gt_linear_velocity,
    parse_calibration,
    parse_events,
    parse_imu,
    parse_poses,
    write_calibration,
    write_events,
    write_imu,
    write_poses,
)
from evalign.events import Events


EVENTS_TXT = "0.10 12 34 1\n0.20 100 90 0\n0.20 101 90 1\n0.35 0 0 0\n"


class TestParseEvents:
    def test_basic(self):
        ev = parse_events(io.StringIO(EVENTS_TXT), width=240, height=180)
        assert len(ev) == 4
        np.testing.assert_array_equal(ev.x, [12, 100, 101, 0])
        np.testing.assert_array_equal(ev.polarity, [1, 0, 1, 0])
        assert ev.t[1] == ev.t[2]  # simultaneous events are legal

    def test_empty(self):
        ev = parse_events(io.StringIO(""), width=240, height=180)
        assert len(ev) == 0

    @pytest.mark.parametrize("line,msg", [
        ("0.1 240 0 1\n", "x"),
        ("0.1 0 180 1\n", "y"),
        ("0.1 5 5 2\n", "polarity"),
        ("0.1 5 5 -1\n", "polarity"),
        ("0.1 5 5\n", "column"),
        ("nan 5 5 1\n", "finite"),
    ])
    def test_bad_rows(self, line, msg):
        with pytest.raises(ParseError, match=msg):
            parse_events(io.StringIO(line), width=240, height=180)

    def test_unsorted_rejected(self):
        with pytest.raises(ParseError, match="decreasing"):
            parse_events(io.StringIO("1.0 0 0 1\n0.5 0 0 1\n"), width=240, height=180)


class TestParseCalibration:
    def test_pinhole(self):
        cam = parse_calibration(io.StringIO("200 200 120 90 0 0 0 0 0\n"),
                                width=240, height=180)
        assert (cam.fx, cam.fy, cam.cx, cam.cy) == (200, 200, 120, 90)
        assert not cam.has_distortion

    def test_distortion_stored_verbatim(self):
        cam = parse_calibration(
            io.StringIO("199 198 122 92 -0.2 0.05 0.001 -0.0005 0.01\n"),
            width=240, height=180)
        assert cam.has_distortion
        np.testing.assert_array_equal(cam.distortion, [-0.2, 0.05, 0.001, -0.0005, 0.01])

    def test_wrong_field_count(self):
        with pytest.raises(ParseError):
            parse_calibration(io.StringIO("200 200 120 90\n"), width=240, height=180)

    def test_negative_focal(self):
        with pytest.raises((ParseError, ValueError)):
            parse_calibration(io.StringIO("-200 200 120 90 0 0 0 0 0\n"),
                              width=240, height=180)


class TestParseImu:
    def test_basic(self):
        imu = parse_imu(io.StringIO("1.0 0 0 9.81 0.1 0 0\n"))
        assert len(imu) == 1
        np.testing.assert_allclose(imu.gyro[0], [0.1, 0.0, 0.0])
        np.testing.assert_allclose(imu.accel[0], [0.0, 0.0, 9.81])

    def test_empty(self):
        assert len(parse_imu(io.StringIO(""))) == 0

    def test_out_of_order(self):
        with pytest.raises(ParseError):
            parse_imu(io.StringIO("1.0 0 0 0 0 0 0\n0.9 0 0 0 0 0 0\n"))

    def test_tied_timestamps_rejected(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_imu(io.StringIO("1.0 0 0 0 0 0 0\n1.0 0 0 0 0 0 0\n"))


class TestParsePoses:
    def test_identity(self):
        poses = parse_poses(io.StringIO("0.5 1 2 3 0 0 0 1\n"))
        assert len(poses) == 1
        np.testing.assert_array_equal(poses.position[0], [1, 2, 3])
        np.testing.assert_array_equal(poses.orientation[0], [0, 0, 0, 1])

    def test_near_unit_normalized(self):
        eps = 5e-4
        poses = parse_poses(io.StringIO(f"0.5 0 0 0 0 0 0 {1 + eps}\n"))
        np.testing.assert_allclose(np.linalg.norm(poses.orientation[0]), 1.0, atol=1e-12)

    def test_far_from_unit_rejected(self):
        with pytest.raises(ParseError):
            parse_poses(io.StringIO("0.5 0 0 0 0 0 0 0.5\n"))

    def test_sorted_pair(self):
        poses = parse_poses(io.StringIO("0.1 0 0 0 0 0 0 1\n0.2 1 0 0 0 0 0 1\n"))
        assert len(poses) == 2
        assert poses.t[0] < poses.t[1]


class TestRoundTrips:
    def test_events_round_trip_integral(self, tmp_path):
        ev = parse_events(io.StringIO(EVENTS_TXT), width=240, height=180)
        p = tmp_path / "events.txt"
        write_events(ev, p)
        again = parse_events(p, width=240, height=180)
        assert again == ev

    def test_events_negative_polarity_canonicalized(self, tmp_path):
        ev = Events(x=[5], y=[6], t=[0.25], polarity=[-1])
        p = tmp_path / "events.txt"
        write_events(ev, p)
        again = parse_events(p, width=240, height=180)
        assert again.polarity[0] == 0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_events_round_trip_random(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 50))
        ev = Events(
            x=rng.integers(0, 240, n), y=rng.integers(0, 180, n),
            t=np.sort(np.round(rng.uniform(0, 10, n), 9)),
            polarity=rng.integers(0, 2, n),
        )
        p = tmp_path_factory.mktemp("rt") / "events.txt"
        write_events(ev, p)
        again = parse_events(p, width=240, height=180)
        assert again == ev

    def test_calibration_round_trip(self, tmp_path):
        text = "199 198 122 92 -0.2 0.05 0.001 -0.0005 0.01\n"
        cam = parse_calibration(io.StringIO(text), width=240, height=180)
        p = tmp_path / "calib.txt"
        write_calibration(cam, p)
        assert parse_calibration(p, width=240, height=180) == cam

    def test_imu_round_trip(self, tmp_path):
        imu = parse_imu(io.StringIO("0.5 1 2 3 0.1 -0.2 0.3\n0.6 0 0 9.8 0 0 0\n"))
        p = tmp_path / "imu.txt"
        write_imu(imu, p)
        again = parse_imu(p)
        np.testing.assert_allclose(again.t, imu.t)
        np.testing.assert_allclose(again.gyro, imu.gyro)

    def test_poses_round_trip(self, tmp_path):
        poses = parse_poses(io.StringIO(
            "0.1 0 0 0 0 0 0 1\n"
            "0.2 1 2 3 0 0 0.707106781 0.707106781\n"))
        p = tmp_path / "groundtruth.txt"
        write_poses(poses, p)
        again = parse_poses(p)
        np.testing.assert_allclose(again.position, poses.position, atol=1e-9)
        np.testing.assert_allclose(again.orientation, poses.orientation, atol=1e-9)


def pose(t, p, q=(0.0, 0.0, 0.0, 1.0)):
    return PoseSample(t=t, position=np.asarray(p, float),
                      orientation=np.asarray(q, float))


class TestGtLinearVelocity:
    def test_two_sample_line(self):
        t, v = gt_linear_velocity([pose(0.0, (0, 0, 0)), pose(1.0, (1, 0, 0))])
        assert t.shape == (1,)
        assert t[0] == pytest.approx(0.5)
        np.testing.assert_allclose(v[0], [1.0, 0.0, 0.0])

    def test_constant_position(self):
        poses = [pose(0.1 * i, (2.0, -1.0, 3.0)) for i in range(5)]
        _, v = gt_linear_velocity(poses)
        np.testing.assert_allclose(v, 0.0, atol=1e-15)

    def test_quadratic_central_difference(self):
        # p(t) = t^2 on x: the symmetric difference over [0, 0.2] equals the
        # true derivative 2t at the window midpoint t = 0.1 exactly.
        poses = [pose(0.1 * i, (0.01 * i * i, 0.0, 0.0)) for i in range(11)]
        t, v = gt_linear_velocity(poses)
        i = int(np.argmin(np.abs(t - 0.1)))
        assert t[i] == pytest.approx(0.1, abs=1e-12)
        assert v[i, 0] == pytest.approx(0.2, abs=1e-12)

    def test_window_count_and_stamps(self):
        poses = [pose(float(i), (0, 0, 0)) for i in range(4)]
        t, v = gt_linear_velocity(poses)
        assert len(t) == 4  # one-sided ends + two interior central windows
        np.testing.assert_allclose(t, [0.5, 1.0, 2.0, 2.5])

    def test_camera_frame_uses_inverse_orientation(self):
        # 90 deg about +z: world x maps onto camera -y after the inverse rotation
        s = np.sin(np.pi / 4)
        c = np.cos(np.pi / 4)
        poses = [
            pose(0.0, (0, 0, 0), (0, 0, s, c)),
            pose(1.0, (1, 0, 0), (0, 0, s, c)),
        ]
        _, v = gt_linear_velocity(poses, frame="camera")
        np.testing.assert_allclose(v[0], [0.0, -1.0, 0.0], atol=1e-12)
        _, vw = gt_linear_velocity(poses, frame="world")
        np.testing.assert_allclose(vw[0], [1.0, 0.0, 0.0], atol=1e-12)

    def test_duplicate_timestamps_rejected(self):
        with pytest.raises(ValueError):
            gt_linear_velocity([pose(0.0, (0, 0, 0)), pose(0.0, (1, 0, 0))])

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            gt_linear_velocity([pose(0.0, (0, 0, 0))])

    def test_unknown_frame_rejected(self):
        with pytest.raises(ValueError):
            gt_linear_velocity([pose(0.0, (0, 0, 0)), pose(1.0, (1, 0, 0))],
                               frame="body")
