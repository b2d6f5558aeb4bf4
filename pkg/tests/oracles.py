"""Independent reference implementations used to check the estimators.

Everything here is written the slow, obvious way on purpose: exhaustive
vertex enumeration for quantile regression, textbook IRLS for the binary
fits, and plain normal equations for the location model.  None of it
shares code with the package under test.
"""

import itertools

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import norm


def check_loss(y, design, w, beta, tau):
    """Weighted asymmetric absolute loss at one quantile level."""
    r = y - design @ beta
    return float(np.sum(w * r * (tau - (r < 0.0))))


def qr_vertex_oracle(y, design, w, tau):
    """Exact weighted QR optimum by enumerating interpolating subsets.

    The LP optimum is attained at a basic solution fitting exactly k
    observations, k = number of columns; trying every subset is exact.
    Returns (beta, objective).
    """
    n, k = design.shape
    combos = np.array(list(itertools.combinations(range(n), k)))
    mats = design[combos]
    dets = np.abs(np.linalg.det(mats))
    ok = dets > 1e-9 * max(1.0, np.abs(design).max()) ** k
    combos, mats = combos[ok], mats[ok]
    betas = np.linalg.solve(mats, y[combos][..., None])[..., 0]
    best_obj = np.inf
    best_beta = None
    # chunk the objective evaluation to keep memory flat
    for start in range(0, betas.shape[0], 4096):
        b = betas[start : start + 4096]
        r = y[None, :] - b @ design.T
        obj = np.sum(w[None, :] * r * (tau - (r < 0.0)), axis=1)
        i = int(np.argmin(obj))
        if obj[i] < best_obj:
            best_obj = float(obj[i])
            best_beta = b[i]
    return best_beta, best_obj


def wls_normal_equations(y, design, w):
    """Weighted least squares via the normal equations."""
    xtw = design.T * w[None, :]
    return np.linalg.solve(xtw @ design, xtw @ y)


def binary_irls_oracle(design, b, w, link="logit", tol=1e-13, max_iter=200):
    """Textbook IRLS for a weighted Bernoulli GLM, one threshold at a time."""
    n, k = design.shape
    share = np.clip(np.sum(w * b) / np.sum(w), 1e-6, 1 - 1e-6)
    if link == "logit":
        beta = np.zeros(k)
        beta[0] = np.log(share / (1 - share))
    else:
        beta = np.zeros(k)
        beta[0] = norm.ppf(share)
    for _ in range(max_iter):
        eta = design @ beta
        if link == "logit":
            mu = expit(eta)
            dmu = mu * (1 - mu)
        else:
            mu = ndtr(eta)
            dmu = norm.pdf(eta)
        mu = np.clip(mu, 1e-12, 1 - 1e-12)
        var = mu * (1 - mu)
        ww = w * dmu * dmu / var
        z = eta + (b - mu) / np.where(dmu == 0, 1.0, dmu)
        xtw = design.T * ww[None, :]
        beta_new = np.linalg.solve(xtw @ design, xtw @ z)
        score = design.T @ (w * dmu / var * (b - mu))
        beta = beta_new
        if np.max(np.abs(score)) < tol:
            break
    return beta


def weighted_ecdf(y, w, at):
    """Brute-force weighted empirical CDF."""
    w = np.asarray(w, float)
    w = w / w.sum()
    return np.array([w[y <= t].sum() for t in np.atleast_1d(at)])


def pairwise_gini(values, masses):
    """Gini from the mean absolute difference over all atom pairs."""
    v = np.asarray(values, float)
    m = np.asarray(masses, float)
    m = m / m.sum()
    mu = float(np.sum(v * m))
    mad = float(np.sum(m[:, None] * m[None, :] * np.abs(v[:, None] - v[None, :])))
    return mad / (2.0 * mu)


def lorenz_partial_mean(values, masses, y):
    """L(y) = E[V 1{V <= y}] / E[V] for a weighted atom cloud."""
    v = np.asarray(values, float)
    m = np.asarray(masses, float)
    m = m / m.sum()
    mu = float(np.sum(v * m))
    return float(np.sum(v[v <= y] * m[v <= y]) / mu)
