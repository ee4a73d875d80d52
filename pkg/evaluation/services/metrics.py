"""
Evaluation statistics: average NLL, empirical tail-dependence coefficients,
and the KS distance of PIT values from the uniform law.
"""

import numpy as np
from scipy import stats

from cometflows.exceptions import DomainError, InsufficientDataError, ShapeError, UndefinedCoefficientError
from marginals.services.marginal import empirical_quantile

MIN_KS_VALUES = 10
SIDES = ('upper', 'lower')


def _matrix(data):
    return np.asarray(getattr(data, 'values', data), dtype=float)


def avg_nll(model, test):
    """-mean(log_prob) over the rows of test, at sigma = 0."""
    values = _matrix(test)
    if values.ndim == 1:
        values = values[None, :]
    d = getattr(model, 'd', values.shape[1])
    if values.ndim != 2 or values.shape[1] != d:
        raise ShapeError(f"model has dimension {d}, test data has shape {values.shape}")
    return -float(np.mean(model.log_prob(values)))


def tail_dep_coeff(samples, i, j, u, side='upper'):
    """
    Empirical tail-dependence coefficient of column i given column j.

    upper: #{x_i > q_i and x_j > q_j} / #{x_j > q_j}, q the u-quantiles.
    lower: the same with <, where u is the small level itself (e.g. 0.05).
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {u}")
    if side not in SIDES:
        raise DomainError(f"side must be 'upper' or 'lower', got '{side}'")
    x = _matrix(samples)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D sample matrix, got shape {x.shape}")
    xi, xj = x[:, i], x[:, j]
    qi = empirical_quantile(xi, u)
    qj = empirical_quantile(xj, u)
    if side == 'upper':
        given = xj > qj
        joint = given & (xi > qi)
    else:
        given = xj < qj
        joint = given & (xi < qi)
    count = int(given.sum())
    if count == 0:
        raise UndefinedCoefficientError(
            f"no rows beyond the {u} quantile of column {j} ({side} tail); the coefficient is undefined"
        )
    return int(joint.sum()) / count


def ks_uniformity(values):
    """Kolmogorov-Smirnov distance between the empirical CDF of values and U(0, 1)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < MIN_KS_VALUES:
        raise InsufficientDataError(f"KS statistic needs at least {MIN_KS_VALUES} values, got {v.size}")
    if np.any(~((v >= 0.0) & (v <= 1.0))):
        raise DomainError("PIT values must lie in [0, 1]")
    return float(stats.kstest(v, 'uniform').statistic)


def empirical_cdf(reference, values):
    """Fraction of reference points <= each value."""
    ordered = np.sort(np.asarray(reference, dtype=float))
    return np.searchsorted(ordered, np.asarray(values, dtype=float), side='right') / ordered.size


def pearson(x, y):
    """Pearson correlation, or None when either column is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    r = float(stats.pearsonr(x, y).statistic)
    return r if np.isfinite(r) else None
