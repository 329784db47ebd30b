"""Per-packet velocity estimation: Adam over finite-difference gradients.

The loss landscape is cheap to evaluate (fused kernel) but has no analytic
gradient here, so gradients come from central differences over the 3-6 warp
parameters.  Adam runs with a fixed learning rate (no decay) and an early
stopping rule on parameter movement; the best-loss iterate is returned, never
the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .events import (EventPacket, Events, MODEL_CLASSES, WarpParams, make_params)
from .iwe import CanvasGeometry, accumulate, smooth
from .likelihood import LossConfig, evaluate_loss
from .loss_kernel import FusedLoss, make_fused_loss
from .warp import BearingLUT, warp_events


class EstimationError(RuntimeError):
    """Raised when a packet cannot be estimated (e.g. nothing deposits)."""


@dataclass(frozen=True)
class OptimConfig:
    """Adam and finite-difference settings; defaults follow the reference protocol."""

    lr: float = 0.05
    max_iters: int = 250
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    fd_step: float = 1e-3
    warm_start: bool = True
    early_stop_tol: float = 1e-6
    early_stop_patience: int = 10
    engine: str = "fused"  # or "reference": composed warp/iwe/likelihood path

    def __post_init__(self):
        if not (self.lr > 0):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.engine not in ("fused", "reference"):
            raise ValueError(f"engine must be 'fused' or 'reference', got {self.engine!r}")


@dataclass(frozen=True)
class VelocityEstimate:
    params: WarpParams
    t_mid: float
    final_loss: float
    iterations: int
    converged: bool


@dataclass
class OptTrace:
    losses: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def fd_gradient(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray,
                steps) -> np.ndarray:
    """Central-difference gradient (L(theta+h e_i) - L(theta-h e_i)) / 2h."""
    theta = np.asarray(theta, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), theta.shape)
    grad = np.empty_like(theta)
    for i in range(len(theta)):
        h = steps[i]
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        lp = loss_fn(tp)
        lm = loss_fn(tm)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FloatingPointError(
                f"non-finite loss at finite-difference probe along parameter {i}"
            )
        grad[i] = (lp - lm) / (2.0 * h)
    return grad


def adam_minimize(loss_fn: Callable[[np.ndarray], float], theta0: np.ndarray,
                  config: OptimConfig) -> tuple[np.ndarray, OptTrace]:
    """Adam with bias correction; returns the best-loss iterate seen.

    Stops early once the infinity-norm parameter update stays below
    ``early_stop_tol`` for ``early_stop_patience`` consecutive iterations.  A
    non-finite loss or gradient probe aborts the run and returns the best
    finite iterate with converged=False.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = OptTrace()

    best_theta = theta.copy()
    best_loss = loss_fn(theta)
    trace.losses.append(best_loss)
    if not np.isfinite(best_loss):
        best_loss = np.inf

    quiet = 0
    for k in range(1, config.max_iters + 1):
        try:
            grad = fd_gradient(loss_fn, theta, config.fd_step)
        except FloatingPointError:
            trace.iterations = k - 1
            return best_theta, trace
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1 ** k)
        v_hat = v / (1.0 - config.beta2 ** k)
        step = config.lr * m_hat / (np.sqrt(v_hat) + config.eps_adam)
        theta = theta - step
        loss = loss_fn(theta)
        trace.losses.append(loss)
        trace.iterations = k
        if np.isfinite(loss) and loss < best_loss:
            best_loss = loss
            best_theta = theta.copy()
        if not np.isfinite(loss):
            return best_theta, trace
        if np.max(np.abs(step)) < config.early_stop_tol:
            quiet += 1
            if quiet >= config.early_stop_patience:
                trace.converged = True
                break
        else:
            quiet = 0
    return best_theta, trace


# ---------------------------------------------------------------------------
# Packet-level pipeline


def _reference_loss(packet: EventPacket, lut: BearingLUT, geometry: CanvasGeometry,
                    loss_config: LossConfig, model: str) -> Callable[[np.ndarray], float]:
    """Composed warp -> accumulate -> smooth -> objective closure (slow path)."""

    def fn(theta: np.ndarray) -> float:
        params = make_params(model, theta)
        xw, yw, valid = warp_events(packet.x, packet.y, packet.tau, params,
                                    packet.duration, lut)
        pos, neg = accumulate(xw, yw, packet.polarity, geometry, valid=valid,
                              method=loss_config.voting)
        pos = smooth(pos, loss_config.sigma_smooth)
        neg = smooth(neg, loss_config.sigma_smooth)
        fn.last_kept = int(pos.accumulated_count + neg.accumulated_count)
        if loss_config.normalize_by_events and fn.last_kept == 0:
            return np.inf
        return evaluate_loss(pos, neg, loss_config)

    fn.last_kept = 0
    return fn


def make_packet_loss(packet: EventPacket, lut: BearingLUT, geometry: CanvasGeometry,
                     loss_config: LossConfig, model: str, engine: str = "fused"):
    if engine == "fused":
        return make_fused_loss(packet, lut, geometry, loss_config, model)
    return _reference_loss(packet, lut, geometry, loss_config, model)


def estimate_packet(packet: EventPacket, lut: BearingLUT, model: str,
                    loss_config: LossConfig, optim_config: OptimConfig,
                    theta0: Optional[np.ndarray] = None,
                    geometry: Optional[CanvasGeometry] = None) -> VelocityEstimate:
    """Estimate the warp parameters of one packet by loss minimization.

    ``model`` is "const", "affine" or "linear"; ``theta0`` defaults to zeros.
    Raises EstimationError when no event deposits at the starting point.
    """
    if len(packet) == 0:
        raise EstimationError("empty packet")
    if geometry is None:
        cam = lut.camera
        geometry = CanvasGeometry(sensor_width=cam.width, sensor_height=cam.height)
    n_params = MODEL_CLASSES[model].n_params
    if theta0 is None:
        theta0 = np.zeros(n_params)
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (n_params,):
        raise ValueError(f"theta0 shape {theta0.shape} does not match model {model!r}")

    loss_fn = make_packet_loss(packet, lut, geometry, loss_config, model,
                               engine=optim_config.engine)
    first = loss_fn(theta0)
    if loss_fn.last_kept == 0 or not np.isfinite(first):
        raise EstimationError(
            "no events usable at the starting point; "
            "check warp parameters and canvas padding"
        )
    theta_hat, trace = adam_minimize(loss_fn, theta0, optim_config)
    final_loss = min((l for l in trace.losses if np.isfinite(l)), default=np.inf)
    return VelocityEstimate(
        params=make_params(model, theta_hat),
        t_mid=packet.t_start + 0.5 * (packet.t_end - packet.t_start),
        final_loss=float(final_loss),
        iterations=trace.iterations,
        converged=trace.converged,
    )


def run_sequence(stream: Events, lut: BearingLUT, model: str,
                 loss_config: LossConfig, optim_config: OptimConfig,
                 packet_size: int = 30000,
                 geometry: Optional[CanvasGeometry] = None) -> list[VelocityEstimate]:
    """Sequentially estimate every full packet of a stream.

    With warm starting, each packet's optimizer starts from the previous
    packet's estimate.  A packet that fails to estimate yields a flagged
    placeholder (NaN parameters, converged=False) and does not poison the
    next packet's warm start.
    """
    from .events import packetize

    packets = packetize(stream, packet_size)
    estimates: list[VelocityEstimate] = []
    n_params = MODEL_CLASSES[model].n_params
    theta_prev = np.zeros(n_params)
    for packet in packets:
        theta0 = theta_prev if optim_config.warm_start else np.zeros(n_params)
        try:
            est = estimate_packet(packet, lut, model, loss_config, optim_config,
                                  theta0=theta0, geometry=geometry)
        except EstimationError:
            estimates.append(VelocityEstimate(
                params=make_params(model, np.full(n_params, np.nan)),
                t_mid=packet.t_start + 0.5 * (packet.t_end - packet.t_start),
                final_loss=np.nan, iterations=0, converged=False,
            ))
            continue
        estimates.append(est)
        theta_prev = est.params.to_array()
    return estimates
