"""Weighted step-function primitives shared across the package.

Everything here operates on plain numpy arrays.  The quantile convention
throughout the package is the left-inverse: Q(u) is the smallest support
point whose cumulative probability reaches u.  A tiny absolute slack
guards the comparisons against floating-point dust in cumulative sums
(weights like 1/3 do not add up exactly); the slack is far below any
probability resolution the estimators can produce.
"""

import numpy as np

# Absolute tolerance when comparing cumulative probabilities to levels.
CUM_TOL = 1e-9


def normalize_weights(w: np.ndarray) -> np.ndarray:
    """Rescale nonnegative weights to sum to one.

    Already-normalized input (sum within 1e-12 of one) is returned
    unchanged so that normalization is exactly idempotent.
    """
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("weights must have a positive finite sum")
    if abs(total - 1.0) <= 1e-12:
        return w
    return w / total


def cell_measures(u_grid: np.ndarray) -> np.ndarray:
    """Probability mass assigned to each grid point of a quantile grid.

    Interior point u_i owns [(u_{i-1}+u_i)/2, (u_i+u_{i+1})/2]; the first
    cell extends down to 0 and the last up to 1, so the measures always
    partition the unit interval.
    """
    u = np.asarray(u_grid, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("u_grid must be a nonempty 1-d array")
    if u.size == 1:
        return np.array([1.0])
    mid = (u[:-1] + u[1:]) / 2.0
    edges = np.concatenate(([0.0], mid, [1.0]))
    return np.diff(edges)


def sort_atoms(values: np.ndarray, masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort a weighted atom cloud and return (sorted values, cumulative mass)."""
    values = np.asarray(values, dtype=float).ravel()
    masses = np.asarray(masses, dtype=float).ravel()
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(masses[order])
    return v, cum


def ecdf_from_atoms(sorted_values: np.ndarray, cum_mass: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Evaluate the atom cloud's CDF at the points `at`."""
    idx = np.searchsorted(sorted_values, np.asarray(at, dtype=float), side="right")
    padded = np.concatenate(([0.0], cum_mass))
    return padded[idx]


def quantiles_from_cdf(
    support: np.ndarray, cdf: np.ndarray, probs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Left-inverse quantiles of a CDF given on a sorted support.

    Returns (values, underflow) where underflow marks levels above the
    final CDF value; those levels are mapped to the largest support point.
    """
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    idx = np.searchsorted(cdf, probs - CUM_TOL, side="left")
    underflow = idx >= len(support)
    idx = np.minimum(idx, len(support) - 1)
    return np.asarray(support)[idx], underflow


def weighted_quantiles(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    """Left-inverse quantiles of a weighted sample."""
    v, cum = sort_atoms(values, weights)
    total = cum[-1]
    if not np.isfinite(total) or total <= 0:
        raise ValueError("weights must have a positive finite sum")
    out, _ = quantiles_from_cdf(v, cum / total, np.asarray(probs, dtype=float))
    return out
