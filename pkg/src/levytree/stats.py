"""Statistics used by the experiment harness: KS distance, chi-square
goodness of fit, and Laplace-transform gaps."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import chi2


def ks_statistic(samples, cdf) -> float:
    """sup_x |F_n(x) - F(x)| against a cdf callable.

    The left limits F(x-) are probed one ulp below each order statistic,
    so the statistic is exact for discontinuous reference cdfs as well
    (a sample tested against its own empirical cdf scores 0).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        return 0.0
    grid = np.arange(1, n + 1) / n
    f_right = np.asarray([cdf(v) for v in x], dtype=float)
    f_left = np.asarray([cdf(np.nextafter(v, -np.inf)) for v in x], dtype=float)
    d_plus = np.max(grid - f_right)
    d_minus = np.max(f_left - (grid - 1.0 / n))
    return float(max(d_plus, d_minus, 0.0))


def chi_square(observed, expected) -> tuple[float, int, float]:
    """Pearson statistic, degrees of freedom, and upper tail p-value.

    Expected counts must be positive; dof is #cells - 1 (totals match).
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape or obs.ndim != 1 or obs.size < 2:
        raise ValueError("observed and expected must be 1-d with >= 2 cells")
    if np.any(exp <= 0):
        raise ValueError("expected counts must be positive")
    if abs(obs.sum() - exp.sum()) > 1e-8 * max(1.0, exp.sum()):
        raise ValueError("observed and expected totals differ")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = obs.size - 1
    return stat, dof, float(chi2.sf(stat, dof))


def chi_square_from_probs(
    counts, probs, min_expected: float = 5.0
) -> tuple[float, int, float]:
    """Chi-square of observed counts against cell probabilities.

    Cells with expected count below min_expected are pooled into the
    last bucket to keep the asymptotic distribution trustworthy.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    expected = probs * n
    keep = expected >= min_expected
    if keep.sum() < 2:
        raise ValueError("too few cells with adequate expected counts")
    if np.all(keep):
        return chi_square(counts, expected)
    obs = np.concatenate((counts[keep], [counts[~keep].sum()]))
    exp = np.concatenate((expected[keep], [expected[~keep].sum()]))
    return chi_square(obs, exp)


def laplace_gap(samples, lam_grid, reference) -> float:
    """max over lam of |mean(exp(-lam * X)) - reference(lam)|."""
    x = np.asarray(samples, dtype=float)
    gaps = [
        abs(float(np.mean(np.exp(-lam * x))) - float(reference(lam)))
        for lam in np.atleast_1d(lam_grid)
    ]
    return max(gaps)


def mc_mean_se(values) -> tuple[float, float]:
    """Monte Carlo mean and its CLT standard error."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.inf
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
