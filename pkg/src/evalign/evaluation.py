"""Comparison of velocity estimates against ground-truth signals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset_io import ImuData
from .events import AffineOmega, ConstOmega, LinearVel
from .optimizer import VelocityEstimate

RAD_TO_DEG = 180.0 / math.pi


@dataclass(frozen=True)
class Metrics:
    """Per-axis mean absolute errors, error-norm spread, and RMS summaries.

    ``rms_pct`` expresses rms as a percentage of the ground truth's maximum
    excursion (peak L2 norm over the evaluated timestamps by default).
    """

    e_wx: float
    e_wy: float
    e_wz: float
    sigma_ew: float
    rms: float
    rms_pct: float


def gt_velocity_at(imu: ImuData, t: float, lag: float = 0.0024) -> np.ndarray:
    """Linearly interpolated gyro at time ``t - lag`` [rad/s].

    The lag models the fixed latency between the event stream and the IMU
    timestamps; queries outside the sampled range raise.
    """
    tq = t - lag
    if len(imu) == 0:
        raise ValueError("empty IMU series")
    if tq < imu.t[0] or tq > imu.t[-1]:
        raise ValueError(
            f"query t={t} (lag-adjusted {tq:.6f}) outside IMU range "
            f"[{imu.t[0]:.6f}, {imu.t[-1]:.6f}]"
        )
    return np.array([np.interp(tq, imu.t, imu.gyro[:, i]) for i in range(3)])


def estimate_vector(est: VelocityEstimate) -> np.ndarray:
    """The 3-vector an estimate is evaluated on.

    Affine estimates are compared at the packet midpoint, omega0 + accel/2,
    matching the convention that each packet reports one velocity at t_mid.
    """
    p = est.params
    if isinstance(p, ConstOmega):
        return np.array(p.omega)
    if isinstance(p, AffineOmega):
        return p.omega_mid()
    if isinstance(p, LinearVel):
        return np.array(p.v)
    raise TypeError(f"unsupported params: {type(p).__name__}")


def compute_metrics(estimates: Sequence[VelocityEstimate],
                    gt_fn: Callable[[float], np.ndarray],
                    unit_scale: float = RAD_TO_DEG,
                    excursion: str = "peak") -> Metrics:
    """Compare each estimate against ground truth at its t_mid.

    ``unit_scale`` converts both estimate and ground truth for reporting
    (default rad/s -> deg/s; use 1.0 for linear velocities).  ``excursion``
    selects the rms_pct denominator: "peak" = max ||gt||_2, "peak_to_peak" =
    max - min of ||gt||_2 over the evaluated timestamps.
    """
    if len(estimates) == 0:
        raise ValueError("no estimates to evaluate")
    if excursion not in ("peak", "peak_to_peak"):
        raise ValueError(f"excursion must be 'peak' or 'peak_to_peak', got {excursion!r}")
    est = np.array([estimate_vector(e) for e in estimates]) * unit_scale
    gt = np.array([gt_fn(e.t_mid) for e in estimates]) * unit_scale
    err = est - gt
    abs_mean = np.mean(np.abs(err), axis=0)
    norms = np.linalg.norm(err, axis=1)
    rms = float(np.sqrt(np.mean(norms**2)))
    gt_norms = np.linalg.norm(gt, axis=1)
    exc = float(gt_norms.max()) if excursion == "peak" else float(gt_norms.max() - gt_norms.min())
    rms_pct = 100.0 * rms / exc if exc > 0 else float("nan")
    return Metrics(
        e_wx=float(abs_mean[0]), e_wy=float(abs_mean[1]), e_wz=float(abs_mean[2]),
        sigma_ew=float(np.std(norms)), rms=rms, rms_pct=rms_pct,
    )


def fit_scale(est_v: Sequence[np.ndarray], gt_v: Sequence[np.ndarray]) -> float:
    """Least-squares scale through the origin: argmin_s sum ||s*est - gt||^2."""
    est = np.asarray(est_v, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_v, dtype=np.float64).reshape(-1, 3)
    if est.shape != gt.shape or len(est) < 1:
        raise ValueError("est and gt must be equal-length non-empty lists of 3-vectors")
    denom = float(np.sum(est * est))
    if denom == 0.0:
        raise ValueError("cannot fit scale: all estimates are zero")
    return float(np.sum(est * gt) / denom)
