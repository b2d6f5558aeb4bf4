"""Batched primal-dual interior-point solver for weighted quantile regression.

For a quantile level tau the estimate minimizes the weighted check loss

    sum_i w_i rho_tau(y_i - x_i' beta),   rho_tau(v) = v (tau - 1{v < 0}).

Because rho_tau is positively homogeneous, scaling each row (y_i, x_i) by
its weight turns the weighted problem into an unweighted one.  The
unweighted problem is the bounded linear program

    max { y'd : X'd = (1 - tau) X'1, d in [0, 1]^n }

whose equality-constraint multiplier is -beta.  This module solves that
LP with a Mehrotra predictor-corrector method started at the exactly
feasible interior point d = (1 - tau) 1, batched over a whole grid of
tau values at once: the normal-equation matrices are p-by-p per problem,
so one iteration costs a few elementwise passes over an (m_tau, n) array
plus one batched p-by-p solve.  Residuals of all linear constraints are
carried in the Newton right-hand sides, so floating-point drift in
ill-conditioned late iterations self-corrects.

Each problem's iterate sequence depends only on its own data, which
makes the batch decomposition irrelevant for results: converged problems
are frozen and removed from the active set without affecting the rest.
"""

import numpy as np

from .exceptions import SolverError

STEP_DAMPING = 0.9995
DEFAULT_MAX_ITER = 200
DEFAULT_GAP_TOL = 1e-9
FEAS_TOL = 1e-8


def check_loss(y: np.ndarray, X: np.ndarray, w: np.ndarray, beta: np.ndarray, tau: float) -> float:
    """Weighted check-loss objective at `beta`."""
    r = y - X @ beta
    return float(np.sum(w * r * (tau - (r < 0.0))))


def _steps(v1, dv1, v2, dv2) -> np.ndarray:
    # Largest alpha in (0, 1] with v + alpha*dv > 0 for both pairs, damped.
    t = np.minimum((dv1 / v1).min(axis=1), (dv2 / v2).min(axis=1))
    with np.errstate(divide="ignore"):
        alpha = np.where(t < 0.0, -STEP_DAMPING / t, 1.0)
    return np.minimum(alpha, 1.0)


def solve_qr_batch(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    taus: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    gap_tol: float = DEFAULT_GAP_TOL,
) -> np.ndarray:
    """Solve weighted quantile regressions for every tau in `taus`.

    Parameters
    ----------
    X : (n, p) design matrix, full column rank.
    y : (n,) outcomes.
    w : (n,) nonnegative weights; zero-weight rows are dropped.
    taus : (m,) quantile levels strictly inside (0, 1).

    Returns
    -------
    (m, p) coefficient matrix, rows ordered like `taus`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any((taus <= 0.0) | (taus >= 1.0)):
        raise SolverError("quantile levels must lie strictly inside (0, 1)")

    keep = w > 0.0
    X, y, w = X[keep], y[keep], w[keep]
    n, p = X.shape
    m = taus.size
    if n < p:
        raise SolverError("fewer positive-weight rows than design columns")

    # Fold the weights into the data; mean-one scaling keeps the LP well sized.
    c_scale = w / w.mean()
    A = np.ascontiguousarray((X * c_scale[:, None]).T)  # (p, n)
    At = A.T
    cvec = -(y * c_scale)
    row_sums = A.sum(axis=1)
    b = (1.0 - taus)[:, None] * row_sums[None, :]  # (m, p)
    two_n = 2.0 * n
    feas_scale = 1.0 + float(np.abs(cvec).max() + np.abs(row_sums).max())

    # Feasible interior start; the dual start is the least-squares multiplier.
    x = np.repeat((1.0 - taus)[:, None], n, axis=1)
    s = 1.0 - x
    lam0 = np.linalg.solve(A @ At, A @ cvec)
    lam = np.repeat(lam0[None, :], m, axis=0)
    r0 = cvec - lam0 @ A
    eps0 = 1e-2 * max(1.0, float(np.abs(r0).mean()))
    z = np.repeat((np.maximum(r0, 0.0) + eps0)[None, :], m, axis=0)
    v = np.repeat((np.maximum(-r0, 0.0) + eps0)[None, :], m, axis=0)

    beta = np.empty((m, p))
    frozen = np.zeros(m, dtype=bool)
    active = np.arange(m)

    for _ in range(max_iter):
        rb = b[active] - x @ At
        ru = 1.0 - x - s
        rc = cvec[None, :] - lam @ A - z + v
        gap = np.einsum("mn,mn->m", x, z) + np.einsum("mn,mn->m", s, v)
        feas = np.abs(rb).max(axis=1) + np.abs(rc).max(axis=1) + np.abs(ru).max(axis=1)
        done = (gap <= gap_tol * (1.0 + np.abs(x @ cvec))) & (feas <= FEAS_TOL * feas_scale)
        if done.any():
            beta[active[done]] = -lam[done]
            frozen[active[done]] = True
            keep_m = ~done
            active = active[keep_m]
            if active.size == 0:
                return beta
            x, s, z, v, lam = x[keep_m], s[keep_m], z[keep_m], v[keep_m], lam[keep_m]
            rb, ru, rc, gap = rb[keep_m], ru[keep_m], rc[keep_m], gap[keep_m]

        zx = z / x
        vs = v / s
        d = 1.0 / (zx + vs)
        mu = gap / two_n

        # Predictor (affine-scaling) direction.
        rhs_x = rc + z - v - vs * ru
        M = (d[:, None, :] * A[None, :, :]) @ At
        dy = np.linalg.solve(M, (rb + (d * rhs_x) @ At)[..., None])[..., 0]
        dx = d * (dy @ A - rhs_x)
        ds = ru - dx
        dz = -z - zx * dx
        dv = -v - vs * ds
        ap = _steps(x, dx, s, ds)
        ad = _steps(z, dz, v, dv)

        # Mehrotra centering parameter from the affine trial point.
        mu_aff = (
            np.einsum("mn,mn->m", x + ap[:, None] * dx, z + ad[:, None] * dz)
            + np.einsum("mn,mn->m", s + ap[:, None] * ds, v + ad[:, None] * dv)
        ) / two_n
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.where(mu > 0.0, np.clip((mu_aff / mu) ** 3, 0.0, 1.0), 0.0)

        # Corrector direction, reusing the batched normal matrices.
        sig_mu = (sigma * mu)[:, None]
        rz = sig_mu - x * z - dx * dz
        rv = sig_mu - s * v - ds * dv
        rhs_x = rc - rz / x + (rv - v * ru) / s
        dy = np.linalg.solve(M, (rb + (d * rhs_x) @ At)[..., None])[..., 0]
        dx = d * (dy @ A - rhs_x)
        ds = ru - dx
        dz = (rz - z * dx) / x
        dv = (rv - v * ds) / s
        ap = _steps(x, dx, s, ds)
        ad = _steps(z, dz, v, dv)

        ap_c = ap[:, None]
        ad_c = ad[:, None]
        x += ap_c * dx
        s += ap_c * ds
        z += ad_c * dz
        v += ad_c * dv
        lam += ad_c * dy
        if not np.isfinite(x).all() or not np.isfinite(z).all():
            raise SolverError(
                f"interior-point iterates diverged at quantile levels {taus[active].tolist()}"
            )

    rb = b[active] - x @ At
    ru = 1.0 - x - s
    rc = cvec[None, :] - lam @ A - z + v
    gap = np.einsum("mn,mn->m", x, z) + np.einsum("mn,mn->m", s, v)
    feas = np.abs(rb).max(axis=1) + np.abs(rc).max(axis=1) + np.abs(ru).max(axis=1)
    done = (gap <= gap_tol * (1.0 + np.abs(x @ cvec))) & (feas <= FEAS_TOL * feas_scale)
    beta[active[done]] = -lam[done]
    frozen[active[done]] = True
    if not frozen.all():
        bad = taus[~frozen]
        raise SolverError(
            f"quantile regression did not converge within {max_iter} iterations "
            f"at levels {np.round(bad, 6).tolist()}"
        )
    return beta
