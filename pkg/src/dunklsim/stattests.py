"""Small statistical utilities shared by the estimators and cross-checks."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import ks_2samp


def ks_pvalue(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov p-value."""
    return float(ks_2samp(np.asarray(a), np.asarray(b)).pvalue)


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / n))


def per_path_slopes(times: np.ndarray, series: np.ndarray) -> np.ndarray:
    """Least-squares slope of each column of ``series`` (n_rec, P) against times."""
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two recorded times for a slope")
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx <= 0.0:
        raise ValueError("degenerate time grid")
    return (tc @ (series - series.mean(axis=0))) / sxx


def loglinear_extrapolated_fraction(eps_values, fractions,
                                    decade_factor: float = 0.1) -> float:
    """Linear fit of fraction against log(eps), read one decade below the ladder.

    The limit at eps -> 0 has no model-given rate, so the fit is evaluated at
    log(decade_factor * min(eps)) and clamped to [0, 1].
    """
    eps = np.asarray(eps_values, dtype=float)
    frac = np.asarray(fractions, dtype=float)
    if eps.size == 1:
        return float(np.clip(frac[0], 0.0, 1.0))
    x = np.log(eps)
    coef = np.polynomial.polynomial.polyfit(x, frac, 1)
    x0 = np.log(decade_factor * eps.min())
    return float(np.clip(coef[0] + coef[1] * x0, 0.0, 1.0))


def energy_distance_test(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                         n_permutations: int = 199):
    """Two-sample multivariate energy-distance permutation test.

    Returns (statistic, p-value); the p-value uses the add-one permutation
    convention, so its resolution is 1/(n_permutations + 1).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    nx, ny = len(x), len(y)
    pooled = np.vstack([x, y])
    D = cdist(pooled, pooled)

    def stat(ix, iy):
        dxy = D[np.ix_(ix, iy)].mean()
        dxx = D[np.ix_(ix, ix)].mean()
        dyy = D[np.ix_(iy, iy)].mean()
        return 2.0 * dxy - dxx - dyy

    idx = np.arange(nx + ny)
    observed = stat(idx[:nx], idx[nx:])
    count = 0
    for _ in range(n_permutations):
        perm = rng.permutation(idx)
        if stat(perm[:nx], perm[nx:]) >= observed:
            count += 1
    pvalue = (1.0 + count) / (n_permutations + 1.0)
    return float(observed), float(pvalue)
