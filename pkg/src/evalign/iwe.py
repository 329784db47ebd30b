"""Accumulation of warped events into padded per-polarity count images.

The canvas extends the sensor by a configurable padding margin so that events
pushed outside the sensor by the warp still contribute counts.  Deposition is
bilinear by default (keeps the loss piecewise-smooth in the motion
parameters); nearest-pixel rounding is available for model-faithful tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .events import _readonly


@dataclass(frozen=True)
class CanvasGeometry:
    """Padded canvas layout around the sensor; origin offset is (-pad, -pad)."""

    sensor_width: int
    sensor_height: int
    pad: int = 100

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ValueError("sensor size must be positive")

    @property
    def width_c(self) -> int:
        return self.sensor_width + 2 * self.pad

    @property
    def height_c(self) -> int:
        return self.sensor_height + 2 * self.pad

    @property
    def n_pixels(self) -> int:
        return self.width_c * self.height_c

    def to_canvas(self, x, y):
        """Shift sensor-frame coordinates into canvas-frame coordinates."""
        return np.asarray(x, dtype=np.float64) + self.pad, np.asarray(y, dtype=np.float64) + self.pad


@dataclass(frozen=True)
class CountImage:
    """Non-negative per-pixel event counts for one polarity.

    ``accumulated_count`` is the number of deposited events; directly after
    accumulation the grid sums to it (bilinear weights sum to 1 per event).
    Smoothing preserves the metadata but may move border mass off-canvas.
    """

    grid: np.ndarray
    polarity: int
    accumulated_count: float
    dropped_count: int
    geometry: CanvasGeometry

    def __post_init__(self):
        object.__setattr__(self, "grid", _readonly(np.asarray(self.grid, dtype=np.float64)))
        expected = (self.geometry.height_c, self.geometry.width_c)
        if self.grid.shape != expected:
            raise ValueError(f"grid shape {self.grid.shape} does not match geometry {expected}")


def _deposit_canonical(xs, ys, geometry: CanvasGeometry, method: str):
    """Flat target indices + weights for one polarity, in a canonical order.

    The (index, weight) pairs are sorted lexicographically before summation so
    that any permutation of the input events produces a bitwise-identical
    grid.  Returns (grid, n_deposited, n_dropped).
    """
    w_c, h_c = geometry.width_c, geometry.height_c
    xc = xs + geometry.pad
    yc = ys + geometry.pad
    if method == "nearest":
        xi = np.rint(xc).astype(np.int64)
        yi = np.rint(yc).astype(np.int64)
        keep = (xi >= 0) & (xi < w_c) & (yi >= 0) & (yi < h_c)
        idx = yi[keep] * w_c + xi[keep]
        wgt = np.ones(len(idx))
    elif method == "bilinear":
        x0 = np.floor(xc).astype(np.int64)
        y0 = np.floor(yc).astype(np.int64)
        # all four bilinear targets must lie inside the canvas
        keep = (x0 >= 0) & (x0 + 1 < w_c) & (y0 >= 0) & (y0 + 1 < h_c)
        x0k, y0k = x0[keep], y0[keep]
        fx = xc[keep] - x0k
        fy = yc[keep] - y0k
        base = y0k * w_c + x0k
        idx = np.concatenate([base, base + 1, base + w_c, base + w_c + 1])
        wgt = np.concatenate([
            (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy,
        ])
    else:
        raise ValueError(f"unknown deposition method {method!r}")
    order = np.lexsort((wgt, idx))
    grid = np.bincount(idx[order], weights=wgt[order], minlength=w_c * h_c)
    n_dep = int(np.count_nonzero(keep))
    return grid.reshape(h_c, w_c), n_dep, len(xs) - n_dep


def accumulate(xw, yw, polarity, geometry: CanvasGeometry, valid=None,
               method: str = "bilinear") -> tuple[CountImage, CountImage]:
    """Deposit warped events into per-polarity count images.

    ``xw, yw`` are warped sensor-frame coordinates; ``polarity`` > 0 selects
    the positive image.  ``valid`` masks out unmappable events, which count as
    dropped.  Events whose deposition footprint leaves the canvas are dropped
    and tallied.  Returns (positive image, negative image).
    """
    xw = np.atleast_1d(np.asarray(xw, dtype=np.float64))
    yw = np.atleast_1d(np.asarray(yw, dtype=np.float64))
    polarity = np.atleast_1d(np.asarray(polarity))
    if valid is None:
        valid = np.ones(len(xw), dtype=bool)
    valid = np.atleast_1d(np.asarray(valid, dtype=bool))
    images = []
    for sign, tag in ((True, +1), (False, -1)):
        sel = (polarity > 0) == sign
        n_total = int(np.count_nonzero(sel))
        use = sel & valid
        grid, n_dep, _ = _deposit_canonical(xw[use], yw[use], geometry, method)
        images.append(CountImage(
            grid=grid, polarity=tag, accumulated_count=float(n_dep),
            dropped_count=n_total - n_dep, geometry=geometry,
        ))
    return images[0], images[1]


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized Gaussian kernel truncated at ceil(3*sigma) taps per side."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.array([1.0])
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    return taps / taps.sum()


def smooth(image: CountImage, sigma: float) -> CountImage:
    """Separable Gaussian smoothing with zero padding at the canvas border."""
    if sigma == 0:
        return image
    taps = gaussian_taps(sigma)
    g = convolve1d(image.grid, taps, axis=0, mode="constant", cval=0.0)
    g = convolve1d(g, taps, axis=1, mode="constant", cval=0.0)
    return CountImage(
        grid=g, polarity=image.polarity,
        accumulated_count=image.accumulated_count,
        dropped_count=image.dropped_count, geometry=image.geometry,
    )


def write_pgm(image: CountImage, path) -> None:
    """Export a count image as a 16-bit binary PGM (linear scaling, max -> 65535)."""
    grid = image.grid
    peak = float(grid.max())
    scale = 65535.0 / peak if peak > 0 else 0.0
    data = np.round(grid * scale).astype(">u2")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())
