"""Core event-stream containers, camera model, and packetization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Event:
    """A single event: pixel coordinates, timestamp, polarity (+1/-1 or 1/0)."""

    x: float
    y: float
    t: float
    polarity: int


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with radial-tangential distortion.

    Distortion coefficients follow the usual (k1, k2, p1, p2, k3) layout and
    default to zero (ideal pinhole).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"sensor size must be positive, got {self.width}x{self.height}")
        if not (0.0 < self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside sensor width {self.width}")
        if not (0.0 < self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside sensor height {self.height}")

    @property
    def distortion(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in (self.k1, self.k2, self.p1, self.p2, self.k3))


@dataclass(frozen=True)
class PriorParams:
    """Parameters of the per-pixel negative-binomial count marginal.

    ``r`` is the gamma shape; ``q`` in (0, 1) is the NB success probability, so
    the gamma rate prior on the pixel intensity is (1 - q) / q.
    """

    r: float
    q: float

    def __post_init__(self):
        if not (self.r > 0):
            raise ValueError(f"r must be positive, got {self.r}")
        if not (0.0 < self.q < 1.0):
            raise ValueError(f"q must lie in (0, 1), got {self.q}")

    @property
    def mean(self) -> float:
        return self.r * self.q / (1.0 - self.q)

    @property
    def variance(self) -> float:
        return self.r * self.q / (1.0 - self.q) ** 2


# ---------------------------------------------------------------------------
# Motion parameter variants


@dataclass(frozen=True)
class ConstOmega:
    """Constant angular velocity [rad/s], camera frame."""

    omega: np.ndarray

    n_params = 3
    kind = "const"

    def __post_init__(self):
        object.__setattr__(self, "omega", _readonly(np.asarray(self.omega, dtype=np.float64)))
        if self.omega.shape != (3,):
            raise ValueError(f"omega must have shape (3,), got {self.omega.shape}")

    def to_array(self) -> np.ndarray:
        return np.array(self.omega)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "ConstOmega":
        return cls(omega=np.asarray(theta, dtype=np.float64))


@dataclass(frozen=True)
class AffineOmega:
    """Linearly varying angular velocity: omega(tau) = omega0 + accel * tau.

    ``tau`` is packet-normalized time, so ``accel`` is the velocity change over
    one packet duration expressed in rad/s per unit tau.
    """

    omega0: np.ndarray
    accel: np.ndarray

    n_params = 6
    kind = "affine"

    def __post_init__(self):
        object.__setattr__(self, "omega0", _readonly(np.asarray(self.omega0, dtype=np.float64)))
        object.__setattr__(self, "accel", _readonly(np.asarray(self.accel, dtype=np.float64)))
        if self.omega0.shape != (3,) or self.accel.shape != (3,):
            raise ValueError("omega0 and accel must both have shape (3,)")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.omega0, self.accel])

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "AffineOmega":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(omega0=theta[:3], accel=theta[3:6])

    def omega_mid(self) -> np.ndarray:
        """Angular velocity at packet midpoint (tau = 1/2)."""
        return self.omega0 + 0.5 * self.accel


@dataclass(frozen=True)
class LinearVel:
    """Constant linear velocity [1/s], known only up to the scene depth scale."""

    v: np.ndarray

    n_params = 3
    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "v", _readonly(np.asarray(self.v, dtype=np.float64)))
        if self.v.shape != (3,):
            raise ValueError(f"v must have shape (3,), got {self.v.shape}")

    def to_array(self) -> np.ndarray:
        return np.array(self.v)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "LinearVel":
        return cls(v=np.asarray(theta, dtype=np.float64))


WarpParams = Union[ConstOmega, AffineOmega, LinearVel]

MODEL_CLASSES = {"const": ConstOmega, "affine": AffineOmega, "linear": LinearVel}


def make_params(model: str, theta: np.ndarray) -> WarpParams:
    try:
        cls = MODEL_CLASSES[model]
    except KeyError:
        raise ValueError(f"unknown motion model {model!r}, expected one of {sorted(MODEL_CLASSES)}")
    return cls.from_array(theta)


# ---------------------------------------------------------------------------
# Event containers


class Events:
    """Column-oriented event stream (x, y, t, polarity arrays of equal length)."""

    __slots__ = ("x", "y", "t", "polarity")

    def __init__(self, x, y, t, polarity):
        self.x = _readonly(np.asarray(x, dtype=np.float64))
        self.y = _readonly(np.asarray(y, dtype=np.float64))
        self.t = _readonly(np.asarray(t, dtype=np.float64))
        self.polarity = _readonly(np.asarray(polarity, dtype=np.int8))
        n = len(self.x)
        for name in ("y", "t", "polarity"):
            if len(getattr(self, name)) != n:
                raise ValueError("all event columns must have equal length")

    @classmethod
    def from_list(cls, events: list[Event]) -> "Events":
        return cls(
            x=[e.x for e in events],
            y=[e.y for e in events],
            t=[e.t for e in events],
            polarity=[e.polarity for e in events],
        )

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Events(self.x[i], self.y[i], self.t[i], self.polarity[i])
        return Event(float(self.x[i]), float(self.y[i]), float(self.t[i]), int(self.polarity[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Events):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self) -> str:
        if len(self) == 0:
            return "Events(n=0)"
        return f"Events(n={len(self)}, t=[{self.t[0]:.6f}, {self.t[-1]:.6f}])"


@dataclass(frozen=True)
class EventPacket:
    """A contiguous slice of an event stream with packet-normalized time.

    ``tau`` maps the packet's time span onto [0, 1]; the raw timestamps are
    kept so that packets can be reassembled losslessly.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    polarity: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        for name in ("x", "y", "t", "tau"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.float64)))
        object.__setattr__(self, "polarity", _readonly(np.asarray(self.polarity, dtype=np.int8)))

    def __len__(self) -> int:
        return len(self.x)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.t_start + self.t_end)

    def to_events(self) -> Events:
        return Events(self.x, self.y, self.t, self.polarity)


def normalize_time(t: np.ndarray, t_start: float, t_end: float) -> np.ndarray:
    """Map timestamps onto [0, 1] relative to the window [t_start, t_end]."""
    if not (t_end > t_start):
        raise ValueError(f"degenerate time window: t_start={t_start}, t_end={t_end}")
    return (np.asarray(t, dtype=np.float64) - t_start) / (t_end - t_start)


def packetize(stream: Events, n: int) -> list[EventPacket]:
    """Split a stream into consecutive packets of exactly ``n`` events.

    The trailing remainder (fewer than ``n`` events) is dropped.  Timestamps
    must be non-decreasing; each packet's window is [t of first, t of last]
    event, which must be strictly positive in length.
    """
    if n < 2:
        raise ValueError(f"packet size must be at least 2, got {n}")
    t = stream.t
    if len(t) > 1:
        bad = np.nonzero(np.diff(t) < 0)[0]
        if bad.size:
            i = int(bad[0])
            raise ValueError(
                f"event timestamps are not sorted: t[{i}]={t[i]:.9f} > t[{i + 1}]={t[i + 1]:.9f}"
            )
    packets = []
    for start in range(0, len(stream) - n + 1, n):
        sl = stream[start : start + n]
        t_start, t_end = float(sl.t[0]), float(sl.t[-1])
        tau = normalize_time(sl.t, t_start, t_end)
        packets.append(
            EventPacket(
                x=sl.x, y=sl.y, t=sl.t, tau=tau, polarity=sl.polarity,
                t_start=t_start, t_end=t_end,
            )
        )
    return packets
