"""Synthetic event generation that instantiates the alignment model exactly.

A scene is a set of world directions, each firing a homogeneous Poisson
process of events.  Camera motion moves each direction across the sensor; an
event is placed at the (distorted) projection of its point's direction at the
event's timestamp.  Estimators run on this data under exactly the generative
assumptions they model, which makes recovery of the true motion a meaningful
oracle rather than a smoke test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import ImuData, PoseData, write_calibration, write_events, write_imu, write_poses
from .events import (AffineOmega, CameraModel, ConstOmega, Events, LinearVel,
                     WarpParams, _readonly)
from .warp import distort_normalized, rotate_by_rotvec

DENOM_MIN = 1e-6


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneModel:
    """World directions with event rates and polarities, plus the master seed."""

    bearings: np.ndarray   # (n, 3) unit vectors
    rates: np.ndarray      # (n,) events/s, > 0
    polarities: np.ndarray  # (n,) in {+1, -1}
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "bearings", _readonly(np.asarray(self.bearings, dtype=np.float64).reshape(-1, 3)))
        object.__setattr__(self, "rates", _readonly(np.asarray(self.rates, dtype=np.float64)))
        object.__setattr__(self, "polarities", _readonly(np.asarray(self.polarities, dtype=np.int8)))
        n = len(self.bearings)
        if len(self.rates) != n or len(self.polarities) != n:
            raise ValueError("scene columns must have equal length")
        if np.any(self.rates <= 0):
            raise ValueError("all rates must be positive")
        norms = np.linalg.norm(self.bearings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("bearings must be unit vectors")

    def __len__(self) -> int:
        return len(self.bearings)


def generate_scene(n_points: int, rate_range: tuple[float, float], fov: float,
                   seed: int) -> SceneModel:
    """Random scene: bearings uniform in a cone of half-angle ``fov`` [rad]
    about the optical axis, rates uniform in ``rate_range``, polarity
    alternating with point index.
    """
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    lo, hi = rate_range
    if not (0 < lo <= hi):
        raise ValueError(f"rates must be positive with lo <= hi, got {rate_range}")
    rng = np.random.default_rng(seed)
    cos_t = rng.uniform(np.cos(fov), 1.0, size=n_points)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n_points)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    bearings = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
    bearings /= np.linalg.norm(bearings, axis=1, keepdims=True)
    rates = rng.uniform(lo, hi, size=n_points)
    polarities = np.where(np.arange(n_points) % 2 == 0, 1, -1)
    return SceneModel(bearings=bearings, rates=rates, polarities=polarities, seed=seed)


def _observed_normalized(bearing: np.ndarray, times: np.ndarray,
                         motion: WarpParams, duration: float):
    """Normalized image coords (u, w) of one point at each event time.

    The transform is the inverse of the corresponding event warp evaluated at
    tau = t / duration, so warping the resulting events by the true motion
    re-aligns them.  Returns (u, w, usable_mask).
    """
    if isinstance(motion, ConstOmega):
        rotvec = -motion.omega[None, :] * times[:, None]
        rays = rotate_by_rotvec(np.broadcast_to(bearing, (len(times), 3)), rotvec)
        ok = rays[:, 2] > DENOM_MIN
        z = np.where(ok, rays[:, 2], 1.0)
        return rays[:, 0] / z, rays[:, 1] / z, ok
    if isinstance(motion, AffineOmega):
        tau = times / duration
        theta = (motion.omega0[None, :] * tau[:, None]
                 + 0.5 * motion.accel[None, :] * (tau * tau)[:, None]) * duration
        rays = rotate_by_rotvec(np.broadcast_to(bearing, (len(times), 3)), -theta)
        ok = rays[:, 2] > DENOM_MIN
        z = np.where(ok, rays[:, 2], 1.0)
        return rays[:, 0] / z, rays[:, 1] / z, ok
    if isinstance(motion, LinearVel):
        u_a = bearing[0] / bearing[2]
        w_a = bearing[1] / bearing[2]
        vx, vy, vz = motion.v
        denom = 1.0 + times * vz
        ok = denom > DENOM_MIN
        safe = np.where(ok, denom, 1.0)
        return (u_a + times * vx) / safe, (w_a + times * vy) / safe, ok
    raise TypeError(f"unsupported motion: {type(motion).__name__}")


def simulate_events(scene: SceneModel, motion: WarpParams, duration: float,
                    camera: CameraModel, round_to_pixel: bool = True) -> Events:
    """Draw events from every scene point and place them on the moving sensor.

    Event times come from per-point Poisson processes (independent RNG
    substreams spawned from the scene seed, so results do not depend on
    evaluation order).  Each event is projected through the camera's
    distortion model; ``round_to_pixel`` snaps to the nearest integer pixel
    (the file format's resolution).  Off-sensor events are discarded.
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if scene.bearings[:, 2].min() <= 0:
        raise ValueError("scene bearings must point in front of the camera (z > 0)")
    children = np.random.SeedSequence(scene.seed).spawn(len(scene))
    all_t, all_x, all_y, all_p = [], [], [], []
    for i in range(len(scene)):
        rng = np.random.default_rng(children[i])
        n_events = rng.poisson(scene.rates[i] * duration)
        if n_events == 0:
            continue
        times = np.sort(rng.uniform(0.0, duration, size=n_events))
        u, w, ok = _observed_normalized(scene.bearings[i], times, motion, duration)
        xd, yd = distort_normalized(camera, u, w)
        px = camera.fx * xd + camera.cx
        py = camera.fy * yd + camera.cy
        if round_to_pixel:
            px = np.rint(px)
            py = np.rint(py)
        ok &= (px >= 0) & (px <= camera.width - 1) & (py >= 0) & (py <= camera.height - 1)
        if not np.any(ok):
            continue
        all_t.append(times[ok])
        all_x.append(px[ok])
        all_y.append(py[ok])
        all_p.append(np.full(int(ok.sum()), 1 if scene.polarities[i] > 0 else 0, dtype=np.int8))
    if not all_t:
        raise SimulationError("no events survive: motion keeps every point off-sensor")
    t = np.concatenate(all_t)
    order = np.argsort(t, kind="stable")
    return Events(
        x=np.concatenate(all_x)[order],
        y=np.concatenate(all_y)[order],
        t=t[order],
        polarity=np.concatenate(all_p)[order],
    )


# ---------------------------------------------------------------------------
# Ground-truth signal sampling and dataset export


def motion_gyro(motion: WarpParams, t: np.ndarray, duration: float) -> np.ndarray:
    """Angular velocity omega(t) of the motion, rad/s; zero for translation."""
    t = np.asarray(t, dtype=np.float64)
    if isinstance(motion, ConstOmega):
        return np.broadcast_to(motion.omega, (len(t), 3)).copy()
    if isinstance(motion, AffineOmega):
        return motion.omega0[None, :] + motion.accel[None, :] * (t / duration)[:, None]
    if isinstance(motion, LinearVel):
        return np.zeros((len(t), 3))
    raise TypeError(f"unsupported motion: {type(motion).__name__}")


def _rotvec_to_quat(rotvec: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(rotvec)
    if theta < 1e-12:
        return np.array([0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2], 1.0])
    axis = rotvec / theta
    s = np.sin(0.5 * theta)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(0.5 * theta)])


def write_dataset(directory, scene: SceneModel, motion: WarpParams,
                  duration: float, camera: CameraModel,
                  round_to_pixel: bool = True,
                  imu_rate: float = 1000.0, pose_rate: float = 200.0,
                  imu_margin: float = 0.05) -> Events:
    """Simulate and write a complete dataset directory.

    Emits events.txt, calib.txt, imu.txt (gyro rows = true angular velocity,
    sampled a little beyond [0, duration] so lag-shifted queries stay in
    range), groundtruth.txt (integrated motion poses) and meta.json with the
    generating parameters.  Returns the simulated events.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    events = simulate_events(scene, motion, duration, camera, round_to_pixel=round_to_pixel)
    write_events(events, directory / "events.txt")
    write_calibration(camera, directory / "calib.txt")

    t_imu = np.arange(-imu_margin, duration + imu_margin + 0.5 / imu_rate, 1.0 / imu_rate)
    gyro = motion_gyro(motion, t_imu, duration)
    write_imu(ImuData(t=t_imu, accel=np.zeros((len(t_imu), 3)), gyro=gyro),
              directory / "imu.txt")

    t_pose = np.arange(0.0, duration + 0.5 / pose_rate, 1.0 / pose_rate)
    if isinstance(motion, LinearVel):
        # positions integrate the scene-relative velocity the estimator reports
        pos = t_pose[:, None] * motion.v[None, :]
        quat = np.tile([0.0, 0.0, 0.0, 1.0], (len(t_pose), 1))
    else:
        pos = np.zeros((len(t_pose), 3))
        quat = np.empty((len(t_pose), 4))
        for j, t in enumerate(t_pose):
            if isinstance(motion, ConstOmega):
                rotvec = motion.omega * t
            else:
                tau = t / duration
                rotvec = (motion.omega0 * tau + 0.5 * motion.accel * tau * tau) * duration
            quat[j] = _rotvec_to_quat(rotvec)
    write_poses(PoseData(t=t_pose, position=pos, orientation=quat),
                directory / "groundtruth.txt")

    meta = {
        "motion": motion.kind,
        "params": motion.to_array().tolist(),
        "duration": duration,
        "n_points": len(scene),
        "seed": scene.seed,
        "round_to_pixel": round_to_pixel,
        "n_events": len(events),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return events
