"""Alignment objectives on per-polarity count images.

The primary objective treats each canvas pixel's count as a draw from a
negative-binomial marginal NB(r, q), the Gamma-Poisson mixture with gamma
shape r and rate (1 - q) / q.  Counts on smoothed images are real-valued, so
the pmf is evaluated through its log-Gamma continuous extension.  All losses
are negated log-likelihoods (lower is better aligned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, expit, gammaln, logit

from .events import PriorParams
from .iwe import CountImage

ML_EPS = 1e-8

OBJECTIVES = ("nb", "poisson_ml", "cmax")


@dataclass(frozen=True)
class LossConfig:
    """Objective selection and shared evaluation settings."""

    objective: str = "nb"
    prior: PriorParams = field(default_factory=lambda: PriorParams(r=0.1, q=0.39))
    sigma_smooth: float = 1.0
    normalize_by_events: bool = True
    voting: str = "bilinear"  # or "nearest"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.voting not in ("bilinear", "nearest"):
            raise ValueError(f"voting must be 'bilinear' or 'nearest', got {self.voting!r}")
        if self.sigma_smooth < 0:
            raise ValueError(f"sigma_smooth must be >= 0, got {self.sigma_smooth}")


def nb_log_pmf(k, r: float, q: float):
    """Log negative-binomial pmf, continuously extended to real k >= 0.

    ln p(k) = lnG(k + r) - lnG(r) - lnG(k + 1) + r ln(1 - q) + k ln q.
    """
    if not (r > 0):
        raise ValueError(f"r must be positive, got {r}")
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0):
        raise ValueError("counts must be non-negative")
    out = (
        gammaln(k + r) - gammaln(r) - gammaln(k + 1.0)
        + r * math.log1p(-q) + k * math.log(q)
    )
    return out if out.ndim else float(out)


def poisson_log_pmf(k, lam):
    """Log Poisson pmf with the log-Gamma continuous extension in k."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0):
        raise ValueError("counts must be non-negative")
    out = k * np.log(lam) - lam - gammaln(k + 1.0)
    return out if out.ndim else float(out)


def _check_pair(pos: CountImage, neg: CountImage):
    if pos.geometry != neg.geometry:
        raise ValueError("polarity images must share canvas geometry")


def _sorted_nonzero(grid: np.ndarray):
    """Nonzero pixel values in ascending order plus the zero-pixel count.

    Sorting fixes the summation order, making every loss bitwise invariant
    under permutations of pixel values.
    """
    v = grid.ravel()
    nz = v[v != 0]
    nz = np.sort(nz)
    return nz, v.size - nz.size


def _nb_sum(grid: np.ndarray, r: float, q: float) -> float:
    nz, n_zero = _sorted_nonzero(grid)
    total = float(np.sum(nb_log_pmf(nz, r, q))) if nz.size else 0.0
    # all-zero pixels share the closed-form value r*ln(1-q)
    total += n_zero * (r * math.log1p(-q))
    return total


def _normalizer(pos: CountImage, neg: CountImage, config: LossConfig) -> float:
    if not config.normalize_by_events:
        return 1.0
    n = pos.accumulated_count + neg.accumulated_count
    if n <= 0:
        raise ValueError("cannot normalize: zero accumulated events")
    return n


def stppp_loss(pos: CountImage, neg: CountImage, config: LossConfig) -> float:
    """Negative NB log-likelihood of both polarity images, summed per-pixel."""
    _check_pair(pos, neg)
    r, q = config.prior.r, config.prior.q
    total = _nb_sum(pos.grid, r, q) + _nb_sum(neg.grid, r, q)
    return -total / _normalizer(pos, neg, config)


def _ml_sum(grid: np.ndarray) -> float:
    nz, _ = _sorted_nonzero(grid)
    nz = nz[nz >= ML_EPS]
    if nz.size == 0:
        return 0.0
    return float(np.sum(nz * np.log(nz) - nz - gammaln(nz + 1.0)))


def ml_lambda_loss(pos: CountImage, neg: CountImage, config: LossConfig) -> float:
    """Poisson log-loss with each pixel's rate set to its own count.

    Pixels with counts below 1e-8 are skipped (their ML rate is degenerate).
    """
    _check_pair(pos, neg)
    total = _ml_sum(pos.grid) + _ml_sum(neg.grid)
    return -total / _normalizer(pos, neg, config)


def cmax_loss(pos: CountImage, neg: CountImage, config: LossConfig) -> float:
    """Negated contrast (population variance) of both images; no normalization."""
    _check_pair(pos, neg)
    return -(float(np.var(pos.grid)) + float(np.var(neg.grid)))


LOSS_FUNCS = {"nb": stppp_loss, "poisson_ml": ml_lambda_loss, "cmax": cmax_loss}


def evaluate_loss(pos: CountImage, neg: CountImage, config: LossConfig) -> float:
    return LOSS_FUNCS[config.objective](pos, neg, config)


# ---------------------------------------------------------------------------
# Prior fitting


def fit_gamma_prior(counts, tol: float = 1e-8) -> PriorParams:
    """Maximum-likelihood NB(r, q) fit to a per-pixel count sample.

    Optimizes the exact NB log-likelihood over (ln r, logit q) with analytic
    gradients (quasi-Newton), starting from a method-of-moments guess.  The
    sample is reduced to histogram sufficient statistics first, so the cost is
    independent of the number of pixels.
    """
    counts = np.asarray(counts)
    if counts.size < 2 or np.all(counts == counts.flat[0]):
        raise ValueError("prior not identifiable: need at least 2 distinct count values")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    kint = counts.astype(np.int64)
    if not np.array_equal(kint, counts):
        raise ValueError("prior fitting expects integer counts (unsmoothed accumulation)")
    hist = np.bincount(kint.ravel())
    ks = np.nonzero(hist)[0].astype(np.float64)
    ws = hist[hist > 0].astype(np.float64)
    n = ws.sum()
    mean = float((ws * ks).sum() / n)
    var = float((ws * (ks - mean) ** 2).sum() / n)

    # method of moments: mean = rq/(1-q), var = rq/(1-q)^2
    if var > mean > 0:
        q0 = 1.0 - mean / var
        r0 = mean * (1.0 - q0) / q0
    else:  # under-dispersed sample; start from a mild default
        q0, r0 = 0.5, max(mean, 0.1)
    q0 = min(max(q0, 1e-4), 1 - 1e-4)
    r0 = max(r0, 1e-4)

    def neg_ll(theta):
        r = math.exp(theta[0])
        q = expit(theta[1])
        ll = (
            (ws * gammaln(ks + r)).sum()
            - n * gammaln(r)
            - (ws * gammaln(ks + 1.0)).sum()
            + n * r * math.log1p(-q)
            + (ws * ks).sum() * math.log(q)
        )
        # chain rule through r = e^t0, q = sigmoid(t1)
        dl_dr = (ws * digamma(ks + r)).sum() - n * digamma(r) + n * math.log1p(-q)
        dl_dq = (ws * ks).sum() / q - n * r / (1.0 - q)
        grad = np.array([dl_dr * r, dl_dq * q * (1.0 - q)])
        return -ll / n, -grad / n

    theta0 = np.array([math.log(r0), logit(q0)])
    res = minimize(neg_ll, theta0, jac=True, method="BFGS",
                   options={"gtol": 1e-12, "xrtol": tol, "maxiter": 500})
    r_hat = math.exp(res.x[0])
    q_hat = float(expit(res.x[1]))
    if not (np.isfinite(r_hat) and 0.0 < q_hat < 1.0 and r_hat > 0):
        raise RuntimeError(f"prior fit failed to converge: {res.message}")
    return PriorParams(r=r_hat, q=q_hat)


def prior_counts(x, y, polarity, width: int, height: int) -> np.ndarray:
    """Per-pixel counts of raw (unwarped) events for prior fitting.

    Nearest-pixel accumulation on the bare sensor (no padding, no smoothing),
    pooled over both polarities: returns one count array per polarity stacked
    into a single flat sample.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    polarity = np.asarray(polarity)
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    keep = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
    samples = []
    for sign in (True, False):
        sel = keep & ((polarity > 0) == sign)
        flat = yi[sel] * width + xi[sel]
        samples.append(np.bincount(flat, minlength=width * height))
    return np.concatenate(samples)
