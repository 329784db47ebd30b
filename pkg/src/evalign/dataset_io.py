"""Readers and writers for the plain-text dataset layout.

A dataset directory holds ``events.txt`` (t x y p), ``calib.txt`` (one line of
nine intrinsics/distortion values), ``imu.txt`` (t ax ay az gx gy gz) and
``groundtruth.txt`` (t px py pz qx qy qz qw).  All files are whitespace
separated with timestamps in seconds.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Union

import numpy as np

from .events import CameraModel, Events, _readonly

Source = Union[str, os.PathLike, IO[str]]


class ParseError(ValueError):
    """Raised for malformed dataset files; message carries file/line context."""


def _load_table(source: Source, n_cols: int, what: str) -> np.ndarray:
    name = getattr(source, "name", None) or str(source)
    try:
        with warnings.catch_warnings():
            # empty input is legal for every stream type; loadtxt warns on it
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(source, dtype=np.float64, ndmin=2)
    except OSError as e:
        raise ParseError(f"{what}: cannot read {name}: {e}") from e
    except ValueError as e:
        raise ParseError(f"{what} in {name}: {e}") from e
    if data.size == 0:
        return np.empty((0, n_cols))
    if data.shape[1] != n_cols:
        raise ParseError(
            f"{what} in {name}: expected {n_cols} columns, found {data.shape[1]}"
        )
    if not np.all(np.isfinite(data)):
        row = int(np.nonzero(~np.isfinite(data).all(axis=1))[0][0])
        raise ParseError(f"{what} in {name}: non-finite value on line {row + 1}")
    return data


def _check_sorted(t: np.ndarray, name: str, what: str, allow_ties: bool) -> None:
    if len(t) < 2:
        return
    d = np.diff(t)
    bad = np.nonzero(d < 0 if allow_ties else d <= 0)[0]
    if bad.size:
        i = int(bad[0])
        kind = "decreasing" if t[i + 1] < t[i] else "duplicate"
        raise ParseError(
            f"{what} in {name}: {kind} timestamp on line {i + 2} "
            f"(t={t[i + 1]:.9f} after t={t[i]:.9f})"
        )


def parse_events(source: Source, width: int, height: int) -> Events:
    """Parse an events file; coordinates are validated against the sensor size.

    Returns events in file order.  Timestamps must be non-decreasing,
    coordinates integer pixels in bounds, polarity 0 or 1.
    """
    name = getattr(source, "name", None) or str(source)
    data = _load_table(source, 4, "events")
    t, x, y, p = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    _check_sorted(t, name, "events", allow_ties=True)
    for vals, lo, hi, label in ((x, 0, width, "x"), (y, 0, height, "y")):
        bad = np.nonzero((vals < lo) | (vals >= hi))[0]
        if bad.size:
            i = int(bad[0])
            raise ParseError(
                f"events in {name}: {label}={vals[i]:g} out of range [0, {hi}) on line {i + 1}"
            )
    bad = np.nonzero((p != 0) & (p != 1))[0]
    if bad.size:
        i = int(bad[0])
        raise ParseError(f"events in {name}: polarity {p[i]:g} not in {{0, 1}} on line {i + 1}")
    return Events(x=x, y=y, t=t, polarity=p.astype(np.int8))


def parse_calibration(source: Source, width: int = 240, height: int = 180) -> CameraModel:
    """Parse a one-line calibration file: fx fy cx cy k1 k2 p1 p2 k3."""
    name = getattr(source, "name", None) or str(source)
    data = _load_table(source, 9, "calibration")
    if data.shape[0] != 1:
        raise ParseError(f"calibration in {name}: expected a single line, found {data.shape[0]}")
    fx, fy, cx, cy, k1, k2, p1, p2, k3 = data[0]
    try:
        return CameraModel(
            fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
            k1=k1, k2=k2, p1=p1, p2=p2, k3=k3,
        )
    except ValueError as e:
        raise ParseError(f"calibration in {name}: {e}") from e


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class PoseSample:
    t: float
    position: np.ndarray
    orientation: np.ndarray  # quaternion (x, y, z, w)


class ImuData:
    """IMU series: timestamps with linear acceleration and angular rate rows."""

    __slots__ = ("t", "accel", "gyro")

    def __init__(self, t, accel, gyro):
        self.t = _readonly(np.asarray(t, dtype=np.float64))
        self.accel = _readonly(np.asarray(accel, dtype=np.float64).reshape(-1, 3))
        self.gyro = _readonly(np.asarray(gyro, dtype=np.float64).reshape(-1, 3))
        if not (len(self.t) == len(self.accel) == len(self.gyro)):
            raise ValueError("IMU columns must have equal length")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> ImuSample:
        return ImuSample(float(self.t[i]), np.array(self.accel[i]), np.array(self.gyro[i]))


class PoseData:
    """Pose series: timestamps, positions, unit quaternions (x, y, z, w)."""

    __slots__ = ("t", "position", "orientation")

    def __init__(self, t, position, orientation):
        self.t = _readonly(np.asarray(t, dtype=np.float64))
        self.position = _readonly(np.asarray(position, dtype=np.float64).reshape(-1, 3))
        self.orientation = _readonly(np.asarray(orientation, dtype=np.float64).reshape(-1, 4))
        if not (len(self.t) == len(self.position) == len(self.orientation)):
            raise ValueError("pose columns must have equal length")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> PoseSample:
        return PoseSample(float(self.t[i]), np.array(self.position[i]), np.array(self.orientation[i]))


def parse_imu(source: Source) -> ImuData:
    """Parse an IMU file: t ax ay az gx gy gz, strictly increasing timestamps."""
    name = getattr(source, "name", None) or str(source)
    data = _load_table(source, 7, "imu")
    _check_sorted(data[:, 0], name, "imu", allow_ties=False)
    return ImuData(t=data[:, 0], accel=data[:, 1:4], gyro=data[:, 4:7])


def parse_poses(source: Source, quat_tol: float = 1e-3) -> PoseData:
    """Parse a pose file: t px py pz qx qy qz qw.

    Quaternions must be unit length within ``quat_tol``; they are renormalized
    on load.  Timestamps must be strictly increasing.
    """
    name = getattr(source, "name", None) or str(source)
    data = _load_table(source, 8, "poses")
    _check_sorted(data[:, 0], name, "poses", allow_ties=False)
    quat = data[:, 4:8]
    norms = np.linalg.norm(quat, axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > quat_tol)[0]
    if bad.size:
        i = int(bad[0])
        raise ParseError(
            f"poses in {name}: quaternion norm {norms[i]:.6f} on line {i + 1} "
            f"deviates from 1 by more than {quat_tol}"
        )
    quat = quat / norms[:, None]
    return PoseData(t=data[:, 0], position=data[:, 1:4], orientation=quat)


# ---------------------------------------------------------------------------
# Writers (inverse of the parsers; used by the synthetic-data generator)


def write_events(events: Events, path: Union[str, os.PathLike]) -> None:
    pol = (events.polarity > 0).astype(np.float64)  # {0,1} on disk
    data = np.column_stack([events.t, events.x, events.y, pol])
    integral = np.array_equal(events.x, np.rint(events.x)) and \
        np.array_equal(events.y, np.rint(events.y))
    coord_fmt = "%d" if integral else "%.6f"
    np.savetxt(path, data, fmt=["%.9f", coord_fmt, coord_fmt, "%d"])


def write_calibration(camera: CameraModel, path: Union[str, os.PathLike]) -> None:
    row = [camera.fx, camera.fy, camera.cx, camera.cy,
           camera.k1, camera.k2, camera.p1, camera.p2, camera.k3]
    with open(path, "w") as f:
        f.write(" ".join(f"{v:.9f}" for v in row) + "\n")


def write_imu(imu: ImuData, path: Union[str, os.PathLike]) -> None:
    data = np.column_stack([imu.t, imu.accel, imu.gyro])
    np.savetxt(path, data, fmt="%.9f")


def write_poses(poses: PoseData, path: Union[str, os.PathLike]) -> None:
    data = np.column_stack([poses.t, poses.position, poses.orientation])
    np.savetxt(path, data, fmt="%.9f")


# ---------------------------------------------------------------------------
# Ground-truth linear velocity from poses


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def gt_linear_velocity(poses: PoseData, frame: str = "camera") -> tuple[np.ndarray, np.ndarray]:
    """Differentiate positions into linear velocities.

    Each velocity is a finite difference over a window of pose samples and is
    stamped at the window's time midpoint: interior samples use the central
    window [i-1, i+1], the two endpoints use one-sided windows.  With exactly
    two poses this yields a single velocity at the middle of the span.

    ``frame`` selects the output frame: "world" returns the raw differences,
    "camera" rotates each velocity through the inverse orientation
    interpolated at the window midpoint (nearest pose orientation).
    Returns (timestamps (m,), velocities (m, 3)).
    """
    if frame not in ("camera", "world"):
        raise ValueError(f"frame must be 'camera' or 'world', got {frame!r}")
    if isinstance(poses, (list, tuple)):
        poses = PoseData(
            t=[s.t for s in poses],
            position=[s.position for s in poses],
            orientation=[s.orientation for s in poses],
        )
    n = len(poses)
    if n < 2:
        raise ValueError(f"need at least 2 poses to differentiate, got {n}")
    t, p = poses.t, poses.position
    if np.any(np.diff(t) <= 0):
        i = int(np.nonzero(np.diff(t) <= 0)[0][0])
        raise ValueError(f"pose timestamps must be strictly increasing (violated at index {i + 1})")

    windows = []  # (i_lo, i_hi) index pairs
    windows.append((0, 1))
    for i in range(1, n - 1):
        windows.append((i - 1, i + 1))
    windows.append((n - 2, n - 1))
    if n == 2:
        windows = [(0, 1)]

    m = len(windows)
    t_out = np.empty(m)
    v_out = np.empty((m, 3))
    for j, (lo, hi) in enumerate(windows):
        dt = t[hi] - t[lo]
        t_out[j] = 0.5 * (t[lo] + t[hi])
        v_out[j] = (p[hi] - p[lo]) / dt

    if frame == "camera":
        for j in range(m):
            k = int(np.argmin(np.abs(poses.t - t_out[j])))
            R = _quat_to_matrix(poses.orientation[k])
            v_out[j] = R.T @ v_out[j]
    return t_out, v_out


# ---------------------------------------------------------------------------
# Directory-level helpers


def load_dataset(directory: Union[str, os.PathLike], width: int = 240, height: int = 180):
    """Load a dataset directory; returns (events, camera, imu, poses).

    ``imu`` and ``poses`` are None when the corresponding file is absent.
    """
    d = Path(directory)
    if not d.is_dir():
        raise ParseError(f"dataset directory not found: {d}")
    events_path = d / "events.txt"
    calib_path = d / "calib.txt"
    for p in (events_path, calib_path):
        if not p.is_file():
            raise ParseError(f"missing required dataset file: {p}")
    camera = parse_calibration(calib_path, width=width, height=height)
    events = parse_events(events_path, width=camera.width, height=camera.height)
    imu = parse_imu(d / "imu.txt") if (d / "imu.txt").is_file() else None
    poses = parse_poses(d / "groundtruth.txt") if (d / "groundtruth.txt").is_file() else None
    return events, camera, imu, poses
