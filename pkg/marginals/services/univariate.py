"""
Univariate distribution machinery for the marginal transform.

- GPDist: generalized Pareto distribution (mu, sigma, xi) with density, CDF,
  quantile function and maximum-likelihood fitting on threshold excesses
- Kde1D: 1-D Gaussian kernel density estimate with Silverman bandwidth and an
  invertible CDF

All evaluation functions accept a scalar or an array and return the same kind.
Fitted objects are immutable.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize, special

from cometflows.exceptions import (
    DataError,
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
)

logger = logging.getLogger(__name__)


# ============================================
# CONSTANTS
# ============================================

XI_ZERO_TOL = 1e-9          # |xi| below this uses the exponential branch
MIN_EXCESSES = 20           # smallest sample accepted by gp_fit_mle
XI_BOUNDS = (-0.49, 5.0)    # MLE search range for xi
_NLL_PENALTY = 1e20

KDE_PPF_TOL = 1e-10         # absolute tolerance in q
KDE_PPF_MAX_ITER = 200
KDE_BRACKET_WIDTHS = 10.0   # bracket = [min - 10h, max + 10h]
_KDE_GRID_SIZE = 1025
_CHUNK_ELEMENTS = 1 << 22   # kernel matrix entries evaluated per chunk

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _coerce(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _finish(arr, scalar):
    return float(arr) if scalar else arr


# ============================================
# GENERALIZED PARETO
# ============================================

@dataclass(frozen=True)
class GPDist:
    """
    Generalized Pareto distribution.

    Support is [mu, inf) when xi >= 0 and [mu, mu - sigma/xi] when xi < 0.
    """
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and np.isfinite(self.xi)):
            raise ParameterError(f"GP parameters must be finite, got {self}")
        if self.sigma <= 0:
            raise ParameterError(f"GP scale must be positive, got sigma={self.sigma}")

    @property
    def is_exponential(self):
        return abs(self.xi) < XI_ZERO_TOL

    @property
    def upper_endpoint(self):
        if self.xi >= 0 or self.is_exponential:
            return math.inf
        return self.mu - self.sigma / self.xi

    def as_dict(self):
        return {'mu': self.mu, 'sigma': self.sigma, 'xi': self.xi}


def gp_logpdf(dist, x):
    """Log-density; -inf off the support."""
    x, scalar = _coerce(x)
    z = (x - dist.mu) / dist.sigma
    out = np.full(z.shape, -np.inf)
    inside = z >= 0
    if dist.is_exponential:
        out[inside] = -math.log(dist.sigma) - z[inside]
    else:
        t = dist.xi * z
        inside &= t > -1.0
        out[inside] = -math.log(dist.sigma) - (1.0 / dist.xi + 1.0) * np.log1p(t[inside])
    return _finish(out, scalar)


def gp_pdf(dist, x):
    """Density of the GP distribution; 0 outside the support."""
    return np.exp(gp_logpdf(dist, x))


def gp_cdf(dist, x):
    """CDF of the GP distribution, clamped to 0 below mu and 1 beyond the endpoint."""
    x, scalar = _coerce(x)
    z = np.maximum((x - dist.mu) / dist.sigma, 0.0)
    if dist.is_exponential:
        out = -np.expm1(-z)
    else:
        t = dist.xi * z
        out = np.ones(z.shape)
        inside = t > -1.0
        out[inside] = -np.expm1(-np.log1p(t[inside]) / dist.xi)
    return _finish(out, scalar)


def gp_ppf(dist, q):
    """Quantile function; q must lie strictly inside (0, 1)."""
    q, scalar = _coerce(q)
    if np.any(~((q > 0.0) & (q < 1.0))):
        raise DomainError("gp_ppf requires 0 < q < 1")
    log_survival = np.log1p(-q)
    if dist.is_exponential:
        out = dist.mu - dist.sigma * log_survival
    else:
        out = dist.mu + dist.sigma * np.expm1(-dist.xi * log_survival) / dist.xi
    return _finish(out, scalar)


def gp_negloglik(excesses, log_sigma, xi):
    """Negative log-likelihood of GP(0, exp(log_sigma), xi) on nonnegative excesses."""
    y = np.asarray(excesses, dtype=float)
    n = y.size
    z = y * math.exp(-log_sigma)
    if abs(xi) < XI_ZERO_TOL:
        return n * log_sigma + float(z.sum())
    t = xi * z
    if np.any(t <= -1.0):
        return math.inf
    return n * log_sigma + (1.0 + 1.0 / xi) * float(np.log1p(t).sum())


def _starting_points(y):
    mean = float(y.mean())
    var = float(y.var())
    lo, hi = XI_BOUNDS
    starts = []

    # Method of moments
    ratio = mean * mean / var
    xi0 = min(max(0.5 * (1.0 - ratio), lo + 0.02), hi - 0.1)
    sigma0 = 0.5 * mean * (ratio + 1.0)
    if xi0 < 0 and y.max() >= -sigma0 / xi0:
        sigma0 = -xi0 * float(y.max()) * 1.05
    starts.append((math.log(sigma0), xi0))

    # Exponential
    starts.append((math.log(mean), 0.0))

    # Heavy tail, xi = 0.5 keeps the mean at sigma / (1 - xi)
    starts.append((math.log(0.5 * mean), 0.5))
    return starts


def gp_fit_mle(excesses, side='right'):
    """
    Fit GP(0, sigma, xi) by maximum likelihood to threshold excesses.

    The caller passes nonnegative excesses (x - threshold for a right tail,
    threshold - x for a left tail) and re-anchors the location. The search runs
    Nelder-Mead over (log sigma, xi) from three starts, xi bounded to
    [-0.49, 5].
    """
    y = np.asarray(excesses, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DataError(f"{side} tail excesses contain non-finite values")
    if np.any(y < 0):
        raise DomainError(f"{side} tail excesses must be nonnegative")
    if y.size < MIN_EXCESSES:
        raise InsufficientDataError(
            f"{side} tail has {y.size} excesses, at least {MIN_EXCESSES} required"
        )
    if np.ptp(y) == 0:
        raise DegenerateDataError(f"{side} tail excesses are all equal")

    def objective(theta):
        value = gp_negloglik(y, theta[0], theta[1])
        return value if np.isfinite(value) else _NLL_PENALTY

    best = None
    for start in _starting_points(y):
        result = optimize.minimize(
            objective,
            np.asarray(start),
            method='Nelder-Mead',
            bounds=[(None, None), XI_BOUNDS],
            options={'xatol': 1e-9, 'fatol': 1e-11, 'maxiter': 5000, 'maxfev': 10000},
        )
        if best is None or result.fun < best.fun:
            best = result

    if best.fun >= _NLL_PENALTY:
        raise NumericalError(f"{side} tail GP fit found no feasible parameters")

    log_sigma, xi = (float(v) for v in best.x)
    dist = GPDist(mu=0.0, sigma=math.exp(log_sigma), xi=xi)
    logger.debug(
        f"[GP FIT] side={side} n={y.size} sigma={dist.sigma:.6g} xi={dist.xi:.6g} "
        f"nll={best.fun:.6g}"
    )
    return dist


# ============================================
# KERNEL DENSITY ESTIMATE
# ============================================

@dataclass(frozen=True, eq=False)
class Kde1D:
    """Gaussian KDE over sorted support points with bandwidth h."""
    points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ParameterError("KDE needs at least two support points")
        if np.any(np.diff(pts) < 0):
            raise ParameterError("KDE support points must be sorted ascending")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ParameterError(f"KDE bandwidth must be positive and finite, got {self.bandwidth}")
        object.__setattr__(self, 'points', pts)

    @property
    def bracket(self):
        pad = KDE_BRACKET_WIDTHS * self.bandwidth
        return float(self.points[0] - pad), float(self.points[-1] + pad)

    @cached_property
    def _cdf_grid(self):
        lo, hi = self.bracket
        xs = np.linspace(lo, hi, _KDE_GRID_SIZE)
        return xs, _kernel_sums(self, xs, want_pdf=False)[0]


def _kernel_sums(kde, x, want_cdf=True, want_pdf=True):
    """Return (cdf, pdf) of the KDE at the points x, computed in row chunks."""
    x = np.asarray(x, dtype=float).ravel()
    pts = kde.points
    h = kde.bandwidth
    cdf = np.empty(x.size) if want_cdf else None
    pdf = np.empty(x.size) if want_pdf else None
    rows = max(1, _CHUNK_ELEMENTS // pts.size)
    for start in range(0, x.size, rows):
        stop = min(start + rows, x.size)
        z = (x[start:stop, None] - pts[None, :]) / h
        if want_cdf:
            cdf[start:stop] = special.ndtr(z).mean(axis=1)
        if want_pdf:
            pdf[start:stop] = np.exp(-0.5 * z * z).mean(axis=1) / (h * _SQRT_2PI)
    return cdf, pdf


def kde_fit(points):
    """
    Fit a Gaussian KDE with Silverman's bandwidth
    h = 0.9 * min(std, IQR / 1.34) * n^(-1/5), falling back to std when IQR = 0.
    """
    pts = np.sort(np.asarray(points, dtype=float).ravel(), kind='stable')
    if pts.size < 2:
        raise InsufficientDataError(f"KDE needs at least 2 points, got {pts.size}")
    if not np.all(np.isfinite(pts)):
        raise DataError("KDE points contain non-finite values")
    std = float(pts.std())
    if std == 0:
        raise DegenerateDataError("KDE points are all equal")
    q25, q75 = np.quantile(pts, [0.25, 0.75])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    bandwidth = 0.9 * spread * pts.size ** (-0.2)
    logger.debug(f"[KDE FIT] n={pts.size} std={std:.6g} iqr={iqr:.6g} h={bandwidth:.6g}")
    return Kde1D(points=pts, bandwidth=bandwidth)


def kde_pdf(kde, x):
    """Mean of Gaussian kernels at x."""
    arr, scalar = _coerce(x)
    _, pdf = _kernel_sums(kde, arr, want_cdf=False)
    return _finish(pdf.reshape(arr.shape), scalar)


def kde_cdf(kde, x):
    """Mean of standard-normal CDFs Phi((x - x_j) / h)."""
    arr, scalar = _coerce(x)
    cdf, _ = _kernel_sums(kde, arr, want_pdf=False)
    return _finish(cdf.reshape(arr.shape), scalar)


def kde_ppf(kde, q):
    """
    Invert kde_cdf on [min - 10h, max + 10h] to |cdf(x) - q| <= 1e-10.

    The bracket is narrowed on a cached CDF grid, then refined by bisection
    with Newton steps accepted only when they stay inside the bracket.
    """
    arr, scalar = _coerce(q)
    flat = arr.ravel()
    if np.any(~((flat > 0.0) & (flat < 1.0))):
        raise DomainError("kde_ppf requires 0 < q < 1")

    xs, cs = kde._cdf_grid
    if np.any(flat < cs[0]) or np.any(flat > cs[-1]):
        raise NumericalError("kde_ppf: quantile lies outside the CDF bracket")

    idx = np.clip(np.searchsorted(cs, flat, side='left'), 1, xs.size - 1)
    lo = xs[idx - 1].copy()
    hi = xs[idx].copy()
    c_lo = cs[idx - 1]
    c_hi = cs[idx]
    span = c_hi - c_lo
    frac = np.divide(flat - c_lo, span, out=np.full(flat.size, 0.5), where=span > 0)
    x = lo + np.clip(frac, 0.0, 1.0) * (hi - lo)

    active = np.arange(flat.size)
    for _ in range(KDE_PPF_MAX_ITER):
        if active.size == 0:
            break
        xa = x[active]
        cdf, pdf = _kernel_sums(kde, xa)
        err = cdf - flat[active]
        converged = np.abs(err) <= KDE_PPF_TOL

        below = err < 0
        lo[active] = np.where(below, xa, lo[active])
        hi[active] = np.where(below, hi[active], xa)
        la, ha = lo[active], hi[active]

        with np.errstate(divide='ignore', invalid='ignore'):
            newton = xa - err / pdf
        take_newton = (pdf > 0) & (newton > la) & (newton < ha)
        step = np.where(take_newton, newton, 0.5 * (la + ha))

        collapsed = (ha - la) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa))
        finished = converged | collapsed
        x[active] = np.where(finished, xa, step)
        active = active[~finished]

    if active.size:
        raise NumericalError(f"kde_ppf did not converge for {active.size} quantiles")
    return _finish(x.reshape(arr.shape), scalar)
