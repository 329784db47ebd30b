"""Event warping under parametric camera-motion models.

Events are lifted to undistorted unit bearing rays via a per-pixel lookup
table, transported by the candidate motion over their packet-normalized
timestamp, and projected back onto an ideal (undistorted) pinhole canvas.
Warped coordinates are therefore always in ideal pinhole coordinates even for
a distorted camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import CameraModel, WarpParams, ConstOmega, AffineOmega, LinearVel, _readonly

# Events whose transported ray has z at or below this are behind the camera
# plane and cannot be projected; they are flagged unmappable.
Z_MIN = 1e-6

_TAYLOR_THETA = 1e-8


class UndistortError(RuntimeError):
    """Raised when iterative undistortion fails to converge for some pixel."""


def skew(omega) -> np.ndarray:
    """Cross-product matrix: skew(w) @ u == np.cross(w, u)."""
    wx, wy, wz = np.asarray(omega, dtype=np.float64)
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def rotation_exp(omega, tau: float, delta: float) -> np.ndarray:
    """Rotation matrix exp(S(omega) * tau * delta) via Rodrigues' formula.

    Falls back to a second-order Taylor expansion for rotation angles below
    1e-8 rad, where the closed form loses precision.
    """
    rotvec = np.asarray(omega, dtype=np.float64) * (tau * delta)
    theta = float(np.linalg.norm(rotvec))
    S = skew(rotvec)
    if theta < _TAYLOR_THETA:
        return np.eye(3) + S + 0.5 * (S @ S)
    # Rodrigues with K = S / theta: R = I + sin(t) K + (1 - cos(t)) K^2
    K = S / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotate_by_rotvec(vectors: np.ndarray, rotvec: np.ndarray) -> np.ndarray:
    """Rotate (n, 3) vectors by per-row (or shared) rotation vectors.

    Vectorized Rodrigues; rows with angle below the Taylor threshold use the
    second-order expansion v + r x v + 0.5 r x (r x v).
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    r = np.asarray(rotvec, dtype=np.float64)
    if r.ndim == 1:
        r = np.broadcast_to(r, v.shape)
    theta = np.linalg.norm(r, axis=1)
    small = theta < _TAYLOR_THETA
    # second-order everywhere first (cheap, exact for the small-angle rows)
    rxv = np.cross(r, v)
    rxrxv = np.cross(r, rxv)
    out = v + rxv + 0.5 * rxrxv
    big = ~small
    if np.any(big):
        th = theta[big][:, None]
        k = r[big] / th
        vb = v[big]
        kxv = np.cross(k, vb)
        kdv = np.sum(k * vb, axis=1, keepdims=True)
        out[big] = vb * np.cos(th) + kxv * np.sin(th) + k * kdv * (1.0 - np.cos(th))
    return out


# ---------------------------------------------------------------------------
# Lens distortion and the bearing lookup table


def distort_normalized(camera: CameraModel, xu, yu):
    """Apply radial-tangential distortion to undistorted normalized coords."""
    xu = np.asarray(xu, dtype=np.float64)
    yu = np.asarray(yu, dtype=np.float64)
    r2 = xu * xu + yu * yu
    radial = 1.0 + r2 * (camera.k1 + r2 * (camera.k2 + r2 * camera.k3))
    xd = xu * radial + 2.0 * camera.p1 * xu * yu + camera.p2 * (r2 + 2.0 * xu * xu)
    yd = yu * radial + camera.p1 * (r2 + 2.0 * yu * yu) + 2.0 * camera.p2 * xu * yu
    return xd, yd


def undistort_normalized(camera: CameraModel, xd, yd, max_iters: int = 20, tol: float = 1e-10):
    """Invert the distortion model by fixed-point iteration.

    Returns (xu, yu, converged_mask).  Convergence is measured as the max
    coordinate update falling below ``tol``.
    """
    xd = np.asarray(xd, dtype=np.float64)
    yd = np.asarray(yd, dtype=np.float64)
    xu, yu = xd.copy(), yd.copy()
    converged = np.zeros(xd.shape, dtype=bool)
    if not camera.has_distortion:
        return xu, yu, np.ones(xd.shape, dtype=bool)
    # Diverging iterates can overflow or hit radial == 0; the converged mask
    # is what decides validity, so silence the intermediate warnings.
    with np.errstate(all="ignore"):
        for _ in range(max_iters):
            r2 = xu * xu + yu * yu
            radial = 1.0 + r2 * (camera.k1 + r2 * (camera.k2 + r2 * camera.k3))
            dx = 2.0 * camera.p1 * xu * yu + camera.p2 * (r2 + 2.0 * xu * xu)
            dy = camera.p1 * (r2 + 2.0 * yu * yu) + 2.0 * camera.p2 * xu * yu
            xu_new = (xd - dx) / radial
            yu_new = (yd - dy) / radial
            step = np.maximum(np.abs(xu_new - xu), np.abs(yu_new - yu))
            xu, yu = xu_new, yu_new
            converged |= step < tol
            if np.all(converged):
                break
    converged &= np.isfinite(xu) & np.isfinite(yu)
    return xu, yu, converged


@dataclass(frozen=True)
class BearingLUT:
    """Per-pixel undistorted unit bearing rays, shape (height, width, 3)."""

    rays: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        object.__setattr__(self, "rays", _readonly(np.asarray(self.rays, dtype=np.float64)))
        if self.rays.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(
                f"rays shape {self.rays.shape} does not match camera "
                f"{self.camera.height}x{self.camera.width}"
            )


def build_bearing_lut(camera: CameraModel) -> BearingLUT:
    """Undistort every pixel center into a unit ray.

    Uses fixed-point undistortion (<= 20 iterations, tol 1e-10 in normalized
    coordinates); raises UndistortError naming the first pixel that fails.
    """
    px, py = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    xd = (px - camera.cx) / camera.fx
    yd = (py - camera.cy) / camera.fy
    xu, yu, ok = undistort_normalized(camera, xd, yd)
    if not np.all(ok):
        iy, ix = np.nonzero(~ok)
        raise UndistortError(
            f"undistortion did not converge at pixel (x={ix[0]}, y={iy[0]}) "
            f"after 20 iterations"
        )
    rays = np.stack([xu, yu, np.ones_like(xu)], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    return BearingLUT(rays=rays, camera=camera)


def lut_rays_at(lut: BearingLUT, x, y) -> np.ndarray:
    """Bilinearly interpolated (renormalized) bearing rays at real-valued pixels.

    At integer pixels this is an exact table lookup.  Coordinates must lie in
    the sensor rectangle [0, W-1] x [0, H-1].
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    h, w = lut.camera.height, lut.camera.width
    if np.any((x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)):
        raise ValueError("event coordinates outside the sensor rectangle")
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2)
    fx = x - x0
    fy = y - y0
    r = lut.rays
    ray = (
        r[y0, x0] * ((1 - fx) * (1 - fy))[:, None]
        + r[y0, x0 + 1] * (fx * (1 - fy))[:, None]
        + r[y0 + 1, x0] * ((1 - fx) * fy)[:, None]
        + r[y0 + 1, x0 + 1] * (fx * fy)[:, None]
    )
    return ray / np.linalg.norm(ray, axis=1, keepdims=True)


def _project(camera: CameraModel, rays: np.ndarray):
    """Ideal pinhole projection; rays with z <= Z_MIN are unmappable."""
    z = rays[:, 2]
    valid = z > Z_MIN
    zsafe = np.where(valid, z, 1.0)
    xw = camera.fx * rays[:, 0] / zsafe + camera.cx
    yw = camera.fy * rays[:, 1] / zsafe + camera.cy
    return xw, yw, valid


# ---------------------------------------------------------------------------
# Warps


def _as_tau(tau, n):
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim == 0:
        tau = np.full(n, float(tau))
    return tau


def warp_rotational(x, y, tau, omega, delta: float, lut: BearingLUT):
    """Warp events under constant angular velocity.

    Each event's bearing ray is rotated by exp(S(omega) * tau * delta) and
    reprojected without distortion.  Returns (x', y', valid); invalid entries
    mapped behind the camera plane.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    tau = _as_tau(tau, len(x))
    rays = lut_rays_at(lut, x, y)
    omega = np.asarray(omega, dtype=np.float64)
    rotvec = omega[None, :] * (tau * delta)[:, None]
    rotated = rotate_by_rotvec(rays, rotvec)
    return _project(lut.camera, rotated)


def warp_affine(x, y, tau, omega0, accel, delta: float, lut: BearingLUT):
    """Warp under linearly varying angular velocity omega(tau) = omega0 + accel*tau.

    The rotation applied at normalized time tau is exp(S(Theta)) with the
    integrated rotation vector Theta = (omega0*tau + accel*tau^2/2) * delta;
    exact for a fixed rotation axis.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    tau = _as_tau(tau, len(x))
    rays = lut_rays_at(lut, x, y)
    omega0 = np.asarray(omega0, dtype=np.float64)
    accel = np.asarray(accel, dtype=np.float64)
    rotvec = (omega0[None, :] * tau[:, None] + 0.5 * accel[None, :] * (tau * tau)[:, None]) * delta
    rotated = rotate_by_rotvec(rays, rotvec)
    return _project(lut.camera, rotated)


def warp_translational(x, y, tau, v, delta: float, lut: BearingLUT):
    """Warp under constant linear velocity at unit scene depth.

    In undistorted normalized coordinates the flow is
    (u', w') = (u, w) - tau*delta*(vx - u*vz, vy - w*vz).
    Always mappable: returns valid = all True.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    tau = _as_tau(tau, len(x))
    rays = lut_rays_at(lut, x, y)
    u = rays[:, 0] / rays[:, 2]
    w = rays[:, 1] / rays[:, 2]
    vx, vy, vz = np.asarray(v, dtype=np.float64)
    td = tau * delta
    u2 = u - td * (vx - u * vz)
    w2 = w - td * (vy - w * vz)
    cam = lut.camera
    xw = cam.fx * u2 + cam.cx
    yw = cam.fy * w2 + cam.cy
    return xw, yw, np.ones(len(x), dtype=bool)


def warp_events(x, y, tau, params: WarpParams, delta: float, lut: BearingLUT):
    """Dispatch to the warp matching the parameter variant."""
    if isinstance(params, ConstOmega):
        return warp_rotational(x, y, tau, params.omega, delta, lut)
    if isinstance(params, AffineOmega):
        return warp_affine(x, y, tau, params.omega0, params.accel, delta, lut)
    if isinstance(params, LinearVel):
        return warp_translational(x, y, tau, params.v, delta, lut)
    raise TypeError(f"unsupported warp parameters: {type(params).__name__}")
