"""
Semi-parametric marginal transform: GP left tail, KDE centre, GP right tail.

    f(x) = a * (1 - A(alpha - x))                          x < alpha
         = a + (b - a) * (K(x) - K(alpha)) / (K(beta) - K(alpha))   alpha <= x <= beta
         = b + (1 - b) * B(x - beta)                       x > beta

A and B are GP CDFs fit to the tail excesses, K is the KDE CDF fit to the
centre. The map is continuous with f(alpha) = a and f(beta) = b, and its output
is clamped to [EPS_U, 1 - EPS_U] so the logit layer downstream stays finite.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from cometflows.exceptions import (
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    InsufficientTailDataError,
    ParameterError,
)
from marginals.services.univariate import (
    MIN_EXCESSES,
    GPDist,
    Kde1D,
    gp_cdf,
    gp_fit_mle,
    gp_logpdf,
    gp_ppf,
    kde_cdf,
    kde_fit,
    kde_pdf,
    kde_ppf,
)

logger = logging.getLogger(__name__)

EPS_U = 1e-7
LOG_DENSITY_FLOOR = -1e10
MIN_COLUMN_LENGTH = 100


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Fitted per-dimension transform; immutable once built."""
    a: float
    b: float
    alpha: float
    beta: float
    left_tail: GPDist
    right_tail: GPDist
    center: Kde1D
    center_cdf_at_alpha: float
    center_cdf_at_beta: float
    name: str = ''

    def __post_init__(self):
        if not (0.0 < self.a < self.b < 1.0):
            raise ParameterError(f"tail quantiles must satisfy 0 < a < b < 1, got ({self.a}, {self.b})")
        if not self.alpha < self.beta:
            raise ParameterError(f"alpha must be below beta, got ({self.alpha}, {self.beta})")
        if not self.center_cdf_at_alpha < self.center_cdf_at_beta:
            raise ParameterError("centre CDF must increase between alpha and beta")

    @property
    def center_mass(self):
        return self.center_cdf_at_beta - self.center_cdf_at_alpha


def empirical_quantile(values, level):
    """Linear interpolation between order statistics (stable sort)."""
    ordered = np.sort(np.asarray(values, dtype=float), kind='stable')
    return float(np.quantile(ordered, level, method='linear'))


def fit_marginal(column, a, b, name=''):
    """
    Fit the three pieces of f_{m,i} to one data column.

    alpha and beta are the empirical a- and b-quantiles; tails are fit by GP
    maximum likelihood on {alpha - x : x < alpha} and {x - beta : x > beta};
    the KDE is fit on the closed centre [alpha, beta].
    """
    if not (0.0 < a < b < 1.0):
        raise ParameterError(f"tail quantiles must satisfy 0 < a < b < 1, got ({a}, {b})")
    x = np.asarray(column, dtype=float).ravel()
    label = name or 'column'
    if x.size < MIN_COLUMN_LENGTH:
        raise InsufficientDataError(
            f"{label} has {x.size} values, at least {MIN_COLUMN_LENGTH} required"
        )
    if np.ptp(x) == 0:
        raise DegenerateDataError(f"{label} is constant", column=name or None)

    alpha = empirical_quantile(x, a)
    beta = empirical_quantile(x, b)

    left = alpha - x[x < alpha]
    right = x[x > beta] - beta
    if left.size < MIN_EXCESSES:
        raise InsufficientTailDataError('left', left.size, MIN_EXCESSES, column=name or None)
    if right.size < MIN_EXCESSES:
        raise InsufficientTailDataError('right', right.size, MIN_EXCESSES, column=name or None)
    if not alpha < beta:
        raise DegenerateDataError(f"{label} has alpha == beta; the centre is empty", column=name or None)

    left_tail = gp_fit_mle(left, side='left')
    right_tail = gp_fit_mle(right, side='right')
    center = kde_fit(x[(x >= alpha) & (x <= beta)])

    model = MarginalModel(
        a=float(a),
        b=float(b),
        alpha=alpha,
        beta=beta,
        left_tail=left_tail,
        right_tail=right_tail,
        center=center,
        center_cdf_at_alpha=kde_cdf(center, alpha),
        center_cdf_at_beta=kde_cdf(center, beta),
        name=name,
    )
    logger.info(
        f"[MARGINAL FIT] {label} a={a} b={b} alpha={alpha:.6g} beta={beta:.6g} "
        f"left_xi={left_tail.xi:.4f} right_xi={right_tail.xi:.4f} "
        f"kde_n={center.points.size} h={center.bandwidth:.4g}"
    )
    return model


def _branches(m, x):
    return x < m.alpha, (x >= m.alpha) & (x <= m.beta), x > m.beta


def marginal_transform(m, x):
    """Map data values to (0, 1); accepts every real."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    flat = arr.ravel()
    u = np.empty(flat.size)
    left, mid, right = _branches(m, flat)

    u[left] = m.a * (1.0 - gp_cdf(m.left_tail, m.alpha - flat[left]))
    u[mid] = m.a + (m.b - m.a) * (kde_cdf(m.center, flat[mid]) - m.center_cdf_at_alpha) / m.center_mass
    u[right] = m.b + (1.0 - m.b) * gp_cdf(m.right_tail, flat[right] - m.beta)

    # Continuity at the thresholds holds exactly
    u[flat == m.alpha] = m.a
    u[flat == m.beta] = m.b
    u = np.clip(u, EPS_U, 1.0 - EPS_U)
    return float(u[0]) if scalar else u.reshape(arr.shape)


def marginal_inverse(m, u):
    """Inverse transform; clamped inputs map back to the clamp boundary."""
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    flat = arr.ravel()
    if np.any(~((flat > 0.0) & (flat < 1.0))):
        raise DomainError("marginal_inverse requires 0 < u < 1")
    flat = np.clip(flat, EPS_U, 1.0 - EPS_U)
    x = np.empty(flat.size)

    left = flat < m.a
    right = flat > m.b
    mid = ~(left | right)

    x[left] = m.alpha - gp_ppf(m.left_tail, 1.0 - flat[left] / m.a)
    x[right] = m.beta + gp_ppf(m.right_tail, (flat[right] - m.b) / (1.0 - m.b))
    if np.any(mid):
        target = m.center_cdf_at_alpha + (flat[mid] - m.a) / (m.b - m.a) * m.center_mass
        x[mid] = kde_ppf(m.center, target)

    x[flat == m.a] = m.alpha
    x[flat == m.b] = m.beta
    return float(x[0]) if scalar else x.reshape(arr.shape)


def marginal_log_density(m, x):
    """
    Log of d/dx marginal_transform, branch matching the transform.

    Points off a GP tail's support get LOG_DENSITY_FLOOR.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    flat = arr.ravel()
    out = np.empty(flat.size)
    left, mid, right = _branches(m, flat)

    out[left] = math.log(m.a) + gp_logpdf(m.left_tail, m.alpha - flat[left])
    with np.errstate(divide='ignore'):
        out[mid] = (
            math.log(m.b - m.a)
            + np.log(kde_pdf(m.center, flat[mid]))
            - math.log(m.center_mass)
        )
    out[right] = math.log(1.0 - m.b) + gp_logpdf(m.right_tail, flat[right] - m.beta)

    out = np.where(np.isfinite(out), out, LOG_DENSITY_FLOOR)
    out = np.maximum(out, LOG_DENSITY_FLOOR)
    return float(out[0]) if scalar else out.reshape(arr.shape)
