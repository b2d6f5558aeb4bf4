"""Conditional quantile and conditional distribution estimators.

Four fitting strategies share two model representations:

* ConditionalQuantileModel — Q(u|x) is linear in the design row for each
  grid u.  The location model stores (intercept + residual quantile,
  common slopes); quantile regression stores a full coefficient row per u.
* ConditionalDistributionModel — F(y|x) = Lambda(design row . coef(y))
  for distribution regression and its shared-slope duration variant, or
  the cell-measure image of a quantile model (`derived_from_quantiles`).

Evaluation code works on raw covariate matrices; the intercept column is
prepended internally.  Monotonizing non-monotone CDF estimates is done
lazily at evaluation time via `rearrange`, which sorts the value vector
per evaluation point and therefore preserves the value multiset.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from .exceptions import DataError, SingularDesignError, SolverError, ValidationError
from .data import GroupSample
from .quantile_ip import solve_qr_batch
from .wstats import cell_measures, sort_atoms, quantiles_from_cdf

INTERCEPT_NAME = "(intercept)"
PROB_CLAMP = (1e-10, 1.0 - 1e-10)
# Newton converges quadratically, so driving the score well below the
# 1e-8 contract also pins the coefficients to oracle solutions.
SCORE_TOL = 1e-11
DR_MAX_ITER = 100


class _LogitLink:
    name = "logit"
    index_cap = 30.0
    # |eta| at the optimum beyond which a fit is reported as separated:
    # the fitted probability is then within ~2e-9 of 0 or 1.
    sep_margin = 20.0

    @staticmethod
    def cdf(eta):
        return special.expit(eta)

    @staticmethod
    def pdf(eta):
        p = special.expit(eta)
        return p * (1.0 - p)

    @staticmethod
    def inverse(p):
        return special.logit(p)


class _ProbitLink:
    name = "probit"
    # Beyond this index the probit probability is inside the clamp bounds
    # anyway, and the density ratios used in scores underflow.
    index_cap = 8.0
    sep_margin = 6.0

    @staticmethod
    def cdf(eta):
        return special.ndtr(eta)

    @staticmethod
    def pdf(eta):
        return np.exp(-0.5 * np.asarray(eta) ** 2) / np.sqrt(2.0 * np.pi)

    @staticmethod
    def inverse(p):
        return special.ndtri(p)


LINKS = {"logit": _LogitLink, "probit": _ProbitLink}


def get_link(name: str):
    try:
        return LINKS[name]
    except KeyError:
        raise ValidationError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


def add_intercept(covariates: np.ndarray) -> np.ndarray:
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def check_design_rank(design: np.ndarray, weights: np.ndarray, names: tuple[str, ...]) -> None:
    """Raise SingularDesignError naming the first dependent column."""
    scaled = design * np.sqrt(np.asarray(weights, dtype=float))[:, None]
    r = np.linalg.qr(scaled, mode="r")
    diag = np.abs(np.diag(r))
    tol = 1e-10 * max(1.0, float(diag.max(initial=0.0)))
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        raise SingularDesignError(names[int(bad[0])])


def _training_box(covariates: np.ndarray) -> np.ndarray:
    x = np.asarray(covariates, dtype=float)
    if x.shape[1] == 0:
        return np.empty((0, 2))
    return np.column_stack([x.min(axis=0), x.max(axis=0)])


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ConditionalQuantileModel:
    """Q(u|x) = design(x) . coefficients[u] on a fixed u-grid."""

    kind: str  # "location" or "quantile_regression"
    u_grid: np.ndarray
    coefficients: np.ndarray  # (|u_grid|, p+1), intercept column first
    covariate_names: tuple[str, ...]
    training_box: np.ndarray  # (p, 2) min/max of raw covariates

    def __post_init__(self):
        object.__setattr__(self, "u_grid", _frozen(self.u_grid))
        object.__setattr__(self, "coefficients", _frozen(self.coefficients))
        object.__setattr__(self, "training_box", _frozen(self.training_box))

    @property
    def design_names(self) -> tuple[str, ...]:
        return (INTERCEPT_NAME, *self.covariate_names)

    def quantile_matrix(self, covariates: np.ndarray) -> np.ndarray:
        """Q(u|x) for all grid u (rows) and all given x (columns)."""
        return self.coefficients @ add_intercept(covariates).T

    def extrapolation_fraction(self, covariates: np.ndarray) -> float:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.training_box.shape[0] == 0 or x.shape[0] == 0:
            return 0.0
        lo, hi = self.training_box[:, 0], self.training_box[:, 1]
        outside = (x < lo[None, :]) | (x > hi[None, :])
        return float(outside.any(axis=1).mean())

    def to_dict(self) -> dict:
        return {
            "model": "conditional_quantile",
            "kind": self.kind,
            "u_grid": self.u_grid.tolist(),
            "coefficients": self.coefficients.tolist(),
            "covariate_names": list(self.covariate_names),
            "training_box": self.training_box.tolist(),
        }


@dataclass(frozen=True)
class ConditionalDistributionModel:
    """F(y|x) on a fixed y-grid.

    `degenerate[i]` is 0 for a fitted row, 1 where the event {Y <= y} has
    zero weighted probability (F forced to 0), 2 where it has full
    probability (F forced to 1).  `separated[i]` marks rows whose link
    index ran into the cap during fitting; their probabilities are
    clamped at evaluation.  `rearrange_on_eval` requests the monotone
    rearrangement of each conditional CDF vector at evaluation time.
    """

    kind: str  # "distribution_regression" | "duration_dr" | "derived_from_quantiles"
    y_grid: np.ndarray
    covariate_names: tuple[str, ...]
    training_box: np.ndarray
    link: str | None = None
    coefficients: np.ndarray | None = None  # (|y_grid|, p+1)
    degenerate: np.ndarray | None = None  # int8 per grid row
    separated: np.ndarray | None = None  # bool per grid row
    anchor_index: int | None = None  # duration_dr normalization row
    source: ConditionalQuantileModel | None = None  # derived kind only
    rearrange_on_eval: bool = False

    def __post_init__(self):
        object.__setattr__(self, "y_grid", _frozen(self.y_grid))
        object.__setattr__(self, "training_box", _frozen(self.training_box))
        if self.coefficients is not None:
            object.__setattr__(self, "coefficients", _frozen(self.coefficients))
        if self.degenerate is not None:
            d = np.ascontiguousarray(np.asarray(self.degenerate, dtype=np.int8))
            d.flags.writeable = False
            object.__setattr__(self, "degenerate", d)
        if self.separated is not None:
            s = np.ascontiguousarray(np.asarray(self.separated, dtype=bool))
            s.flags.writeable = False
            object.__setattr__(self, "separated", s)

    @property
    def design_names(self) -> tuple[str, ...]:
        return (INTERCEPT_NAME, *self.covariate_names)

    def cdf_matrix(self, covariates: np.ndarray) -> np.ndarray:
        """F(y|x) for all grid y (rows) and given x (columns)."""
        if self.kind == "derived_from_quantiles":
            f = self._derived_cdf(covariates)
        else:
            link = get_link(self.link)
            eta = self.coefficients @ add_intercept(covariates).T
            eta = np.clip(eta, -link.index_cap, link.index_cap)
            f = np.clip(link.cdf(eta), PROB_CLAMP[0], PROB_CLAMP[1])
            if self.kind == "distribution_regression" and self.degenerate is not None:
                f[self.degenerate == 1] = 0.0
                f[self.degenerate == 2] = 1.0
        if self.rearrange_on_eval:
            f = np.sort(f, axis=0)
        return f

    def _derived_cdf(self, covariates: np.ndarray) -> np.ndarray:
        q = self.source.quantile_matrix(covariates)  # (m_u, n)
        cells = cell_measures(self.source.u_grid)
        m_y = self.y_grid.size
        n = q.shape[1]
        # bucket[u, i] = index of the first grid y >= Q(u|x_i); mass at
        # bucket j accumulates into F(y_j'), j' >= j.
        bucket = np.searchsorted(self.y_grid, q, side="left")
        flat = bucket * n + np.arange(n)[None, :]
        mass = np.broadcast_to(cells[:, None], q.shape)
        hist = np.bincount(flat.ravel(), weights=mass.ravel(), minlength=(m_y + 1) * n)
        hist = hist.reshape(m_y + 1, n)
        return np.cumsum(hist[:m_y], axis=0)

    def extrapolation_fraction(self, covariates: np.ndarray) -> float:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.training_box.shape[0] == 0 or x.shape[0] == 0:
            return 0.0
        lo, hi = self.training_box[:, 0], self.training_box[:, 1]
        outside = (x < lo[None, :]) | (x > hi[None, :])
        return float(outside.any(axis=1).mean())

    def to_dict(self) -> dict:
        doc = {
            "model": "conditional_distribution",
            "kind": self.kind,
            "y_grid": self.y_grid.tolist(),
            "covariate_names": list(self.covariate_names),
            "training_box": self.training_box.tolist(),
            "link": self.link,
            "rearrange_on_eval": self.rearrange_on_eval,
        }
        doc["coefficients"] = None if self.coefficients is None else self.coefficients.tolist()
        doc["degenerate"] = None if self.degenerate is None else self.degenerate.tolist()
        doc["separated"] = (
            None if self.separated is None else [bool(v) for v in self.separated]
        )
        doc["anchor_index"] = self.anchor_index
        doc["source"] = None if self.source is None else self.source.to_dict()
        return doc


def model_from_dict(doc: dict):
    """Inverse of the models' to_dict methods."""
    try:
        family = doc["model"]
        if family == "conditional_quantile":
            return ConditionalQuantileModel(
                kind=doc["kind"],
                u_grid=np.array(doc["u_grid"], dtype=float),
                coefficients=np.array(doc["coefficients"], dtype=float),
                covariate_names=tuple(doc["covariate_names"]),
                training_box=np.array(doc["training_box"], dtype=float).reshape(-1, 2),
            )
        if family == "conditional_distribution":
            return ConditionalDistributionModel(
                kind=doc["kind"],
                y_grid=np.array(doc["y_grid"], dtype=float),
                covariate_names=tuple(doc["covariate_names"]),
                training_box=np.array(doc["training_box"], dtype=float).reshape(-1, 2),
                link=doc["link"],
                coefficients=None
                if doc["coefficients"] is None
                else np.array(doc["coefficients"], dtype=float),
                degenerate=None if doc["degenerate"] is None else np.array(doc["degenerate"]),
                separated=None if doc["separated"] is None else np.array(doc["separated"]),
                anchor_index=doc["anchor_index"],
                source=None if doc["source"] is None else model_from_dict(doc["source"]),
                rearrange_on_eval=bool(doc.get("rearrange_on_eval", False)),
            )
    except KeyError as exc:
        raise DataError(f"model document is missing field {exc}") from exc
    raise DataError(f"unknown model family {doc.get('model')!r}")


def fit_location_model(sample: GroupSample, u_grid: np.ndarray) -> ConditionalQuantileModel:
    """Weighted least squares plus weighted residual quantiles.

    Q(u|x) = x'beta + alpha(u), alpha(u) the weighted empirical u-quantile
    of the residuals (left-inverse convention), folded into the intercept
    column of the coefficient rows.
    """
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    design = add_intercept(sample.covariates)
    names = (INTERCEPT_NAME, *tuple(f"x{i}" for i in range(sample.n_covariates)))
    check_design_rank(design, sample.weights, names)
    w = sample.weights
    gram = design.T @ (design * w[:, None])
    beta = np.linalg.solve(gram, design.T @ (w * sample.outcomes))
    resid = sample.outcomes - design @ beta
    v, cum = sort_atoms(resid, w)
    alpha, _ = quantiles_from_cdf(v, cum / cum[-1], u_grid)
    coef = np.tile(beta, (u_grid.size, 1))
    coef[:, 0] += alpha
    return ConditionalQuantileModel(
        kind="location",
        u_grid=u_grid,
        coefficients=coef,
        covariate_names=tuple(f"x{i}" for i in range(sample.n_covariates)),
        training_box=_training_box(sample.covariates),
    )


def fit_quantile_regression(
    sample: GroupSample,
    u_grid: np.ndarray,
    max_iter: int = 200,
    gap_tol: float = 1e-9,
) -> ConditionalQuantileModel:
    """Linear quantile regression on every grid u via interior point."""
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    design = add_intercept(sample.covariates)
    names = (INTERCEPT_NAME, *tuple(f"x{i}" for i in range(sample.n_covariates)))
    check_design_rank(design, sample.weights, names)
    coef = solve_qr_batch(design, sample.outcomes, sample.weights, u_grid, max_iter, gap_tol)
    return ConditionalQuantileModel(
        kind="quantile_regression",
        u_grid=u_grid,
        coefficients=coef,
        covariate_names=tuple(f"x{i}" for i in range(sample.n_covariates)),
        training_box=_training_box(sample.covariates),
    )


def _bernoulli_loglik(bmat, prob, w):
    p = np.clip(prob, 1e-12, 1.0 - 1e-12)
    return (w[None, :] * (bmat * np.log(p) + (1.0 - bmat) * np.log1p(-p))).sum(axis=1)


def _binary_mle_batch(design, w, bmat, link, tol=SCORE_TOL, max_iter=DR_MAX_ITER):
    """Weighted Bernoulli MLE for each row of `bmat`, Fisher scoring.

    Returns (coefficients, separated flags).  Rows whose link index runs
    beyond the cap are frozen where they stand and flagged; rows that
    fail to converge otherwise raise SolverError.
    """
    m, n = bmat.shape
    p1 = design.shape[1]
    shares = np.clip(bmat @ w, 1e-6, 1.0 - 1e-6)
    beta = np.zeros((m, p1))
    beta[:, 0] = link.inverse(shares)
    separated = np.zeros(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    active = np.arange(m)
    bmat_a, beta_a = bmat, beta.copy()

    for _ in range(max_iter):
        eta = beta_a @ design.T
        prob = link.cdf(eta)
        lam = link.pdf(eta)
        denom = np.clip(prob * (1.0 - prob), 1e-12, None)
        resid_term = (bmat_a - prob) * (lam / denom)
        score = (resid_term * w[None, :]) @ design
        hit_cap = np.abs(eta).max(axis=1) > link.index_cap
        ok = np.abs(score).max(axis=1) <= tol
        freeze = ok | hit_cap
        if freeze.any():
            sel = active[freeze]
            beta[sel] = beta_a[freeze]
            separated[sel] = np.abs(eta[freeze]).max(axis=1) >= link.sep_margin
            converged[sel] = True
            keep = ~freeze
            active = active[keep]
            if active.size == 0:
                return beta, separated
            bmat_a, beta_a = bmat_a[keep], beta_a[keep]
            eta, prob, lam, denom, score = (
                eta[keep], prob[keep], lam[keep], denom[keep], score[keep],
            )

        fisher_w = w[None, :] * (lam * lam / denom)
        info = np.einsum("mn,np,nq->mpq", fisher_w, design, design, optimize=True)
        step = np.linalg.solve(info, score[..., None])[..., 0]

        # Step-halving safeguard on the weighted log-likelihood.
        ll_old = _bernoulli_loglik(bmat_a, prob, w)
        scale = np.ones(len(active))
        trial = beta_a + step
        for _half in range(30):
            ll_new = _bernoulli_loglik(bmat_a, link.cdf(trial @ design.T), w)
            worse = ll_new < ll_old - 1e-12
            if not worse.any():
                break
            scale = np.where(worse, scale * 0.5, scale)
            trial = beta_a + scale[:, None] * step
        beta_a = trial

    raise SolverError(
        f"distribution regression did not converge within {max_iter} iterations "
        f"for {active.size} grid thresholds"
    )


def fit_distribution_regression(
    sample: GroupSample, y_grid: np.ndarray, link: str = "logit"
) -> ConditionalDistributionModel:
    """Per-threshold weighted binary MLE of 1{Y <= y} with a logit/probit link.

    Thresholds where the indicator is constant in the sample are flagged
    degenerate and evaluate to exactly 0 or 1; separated thresholds keep
    their capped coefficients and a separation flag.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    link_cls = get_link(link)
    design = add_intercept(sample.covariates)
    names = (INTERCEPT_NAME, *tuple(f"x{i}" for i in range(sample.n_covariates)))
    check_design_rank(design, sample.weights, names)
    w = sample.weights
    bmat = (sample.outcomes[None, :] <= y_grid[:, None]).astype(float)
    # Exact indicator checks; weight sums carry float dust and cannot be
    # trusted to hit 0 or 1 exactly.
    degenerate = np.zeros(y_grid.size, dtype=np.int8)
    degenerate[np.all(bmat == 0.0, axis=1)] = 1
    degenerate[np.all(bmat == 1.0, axis=1)] = 2
    fit_rows = np.flatnonzero(degenerate == 0)

    coef = np.zeros((y_grid.size, design.shape[1]))
    separated = np.zeros(y_grid.size, dtype=bool)
    if fit_rows.size:
        sub_coef, sub_sep = _binary_mle_batch(design, w, bmat[fit_rows], link_cls)
        coef[fit_rows] = sub_coef
        separated[fit_rows] = sub_sep
    return ConditionalDistributionModel(
        kind="distribution_regression",
        y_grid=y_grid,
        covariate_names=tuple(f"x{i}" for i in range(sample.n_covariates)),
        training_box=_training_box(sample.covariates),
        link=link,
        coefficients=coef,
        degenerate=degenerate,
        separated=separated,
    )


def fit_duration_dr(
    sample: GroupSample, y_grid: np.ndarray, y0: float, link: str = "logit"
) -> ConditionalDistributionModel:
    """Shared-slope distribution regression F(y|x) = Lambda(alpha(y) + x'beta).

    beta comes from the binary MLE at the anchor threshold y0 (where
    alpha is normalized to zero); each remaining alpha(y) solves the
    one-dimensional score equation in the intercept direction, which is
    monotone because the Bernoulli log-likelihood is concave in alpha.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    link_cls = get_link(link)
    anchor = int(np.argmin(np.abs(y_grid - y0)))
    if abs(y_grid[anchor] - y0) > 1e-9 * max(1.0, abs(y0)):
        raise ValidationError(f"anchor threshold {y0} is not on the y-grid")
    design = add_intercept(sample.covariates)
    names = (INTERCEPT_NAME, *tuple(f"x{i}" for i in range(sample.n_covariates)))
    check_design_rank(design, sample.weights, names)
    w = sample.weights
    bmat = (sample.outcomes[None, :] <= y_grid[:, None]).astype(float)
    all_zero = np.all(bmat == 0.0, axis=1)
    all_one = np.all(bmat == 1.0, axis=1)
    if all_zero[anchor] or all_one[anchor]:
        raise ValidationError(f"anchor threshold {y0} is degenerate in this sample")

    beta, sep0 = _binary_mle_batch(design, w, bmat[anchor : anchor + 1], link_cls)
    beta = beta[0]
    eta_base = design @ beta
    cap = link_cls.index_cap

    def alpha_score(a: float, row: np.ndarray) -> float:
        eta = np.clip(a + eta_base, -cap, cap)
        prob = link_cls.cdf(eta)
        lam = link_cls.pdf(eta)
        denom = np.clip(prob * (1.0 - prob), 1e-12, None)
        return float(np.sum(w * (row - prob) * lam / denom))

    alphas = np.zeros(y_grid.size)
    degenerate = np.zeros(y_grid.size, dtype=np.int8)
    separated = np.zeros(y_grid.size, dtype=bool)
    separated[anchor] = bool(sep0[0])
    for i in range(y_grid.size):
        if i == anchor:
            continue
        if all_zero[i]:
            alphas[i] = -cap
            degenerate[i] = 1
            continue
        if all_one[i]:
            alphas[i] = cap
            degenerate[i] = 2
            continue
        lo, hi = -cap, cap
        f_lo, f_hi = alpha_score(lo, bmat[i]), alpha_score(hi, bmat[i])
        # The score decreases in alpha; a one-signed bracket means the
        # solution sits beyond the cap.
        if f_lo <= 0.0:
            alphas[i] = lo
            separated[i] = True
        elif f_hi >= 0.0:
            alphas[i] = hi
            separated[i] = True
        else:
            alphas[i] = optimize.brentq(alpha_score, lo, hi, args=(bmat[i],), xtol=1e-12)

    coef = np.tile(beta, (y_grid.size, 1))
    coef[:, 0] += alphas
    return ConditionalDistributionModel(
        kind="duration_dr",
        y_grid=y_grid,
        covariate_names=tuple(f"x{i}" for i in range(sample.n_covariates)),
        training_box=_training_box(sample.covariates),
        link=link,
        coefficients=coef,
        degenerate=degenerate,
        separated=separated,
        anchor_index=anchor,
    )


def qf_to_cdf(model: ConditionalQuantileModel, y_grid: np.ndarray) -> ConditionalDistributionModel:
    """Conditional CDF induced by a quantile model through cell measures.

    F(y|x) is the u-grid measure of {u : Q(u|x) <= y}; each grid u owns
    the cell between the midpoints to its neighbors, the first and last
    cells absorbing the tails of (0, 1).
    """
    y_grid = np.asarray(y_grid, dtype=float)
    return ConditionalDistributionModel(
        kind="derived_from_quantiles",
        y_grid=y_grid,
        covariate_names=model.covariate_names,
        training_box=model.training_box,
        source=model,
    )


def rearrange(model: ConditionalDistributionModel) -> ConditionalDistributionModel:
    """Monotone rearrangement, applied lazily when the model is evaluated."""
    if model.rearrange_on_eval:
        return model
    return replace(model, rearrange_on_eval=True)


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to fit and with what knobs."""

    kind: str  # location | qr | dr | duration_dr
    link: str = "logit"
    y0: float | None = None

    def __post_init__(self):
        if self.kind not in {"location", "qr", "dr", "duration_dr"}:
            raise ValidationError(f"unknown estimator kind {self.kind!r}")
        if self.kind in {"dr", "duration_dr"}:
            get_link(self.link)
        if self.kind == "duration_dr" and self.y0 is None:
            raise ValidationError("duration_dr requires an anchor threshold y0")


def fit_estimator(sample: GroupSample, config: EstimatorConfig, u_grid, y_grid):
    """Dispatch to the configured fitting routine."""
    if config.kind == "location":
        return fit_location_model(sample, u_grid)
    if config.kind == "qr":
        return fit_quantile_regression(sample, u_grid)
    if config.kind == "dr":
        return fit_distribution_regression(sample, y_grid, config.link)
    return fit_duration_dr(sample, y_grid, config.y0, config.link)


def as_distribution_model(model, y_grid: np.ndarray) -> ConditionalDistributionModel:
    """Quantile models are converted via qf_to_cdf; others pass through."""
    if isinstance(model, ConditionalQuantileModel):
        return qf_to_cdf(model, y_grid)
    return model
