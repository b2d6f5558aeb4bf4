"""Exchangeable bootstrap, uniform confidence bands, and KS-type tests.

Inference re-runs the whole estimation pipeline under random observation
weights.  Because the weights multiply entire observations (outcome and
covariates together) and are renormalized within group, the resampling
captures covariate sampling uncertainty without analytic covariance
formulas.

Weight streams come from a counter-based generator keyed by
(master_seed, replication index, group), so any execution order and any
thread count produce bit-identical draws.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .counterfactual import FunctionalCurve
from .data import GroupedDataset
from .exceptions import (
    CfdistError,
    DegenerateDistributionError,
    SolverError,
    ValidationError,
)

# 2 * Phi^{-1}(3/4): the interquartile range of a standard normal.
NORMAL_IQR = 1.3489795003921634

SCHEMES = ("multinomial", "bayesian", "wild", "k_of_n", "subsample", "unit")
WILD_LAWS = ("exponential", "poisson")


@dataclass(frozen=True)
class BootstrapPlan:
    """Resampling scheme, replication count, and seed.

    `k` is required by the k_of_n and subsample schemes.  `wild_law`
    picks the wild multiplier law; any i.i.d. nonnegative law with mean
    and variance one qualifies, unit exponential is the default.  The
    `unit` scheme returns all-ones weights and exists purely as a test
    hook (a zero-variance wild law).
    """

    scheme: str
    replications: int = 100
    master_seed: int = 0
    k: int | None = None
    wild_law: str = "exponential"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown bootstrap scheme {self.scheme!r}")
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.scheme in ("k_of_n", "subsample"):
            if self.k is None or self.k < 1:
                raise ValidationError(f"scheme {self.scheme} requires k >= 1")
        if self.wild_law not in WILD_LAWS:
            raise ValidationError(f"unknown wild law {self.wild_law!r}")


def _stream(master_seed: int, replication_index: int, stream: int) -> np.random.Generator:
    key = np.array(
        [master_seed & 0xFFFFFFFFFFFFFFFF, ((replication_index << 1) | stream) & 0xFFFFFFFFFFFFFFFF],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def gen_weights(plan: BootstrapPlan, n: int, replication_index: int, stream: int = 0) -> np.ndarray:
    """One exchangeable weight vector of length n.

    `stream` separates independent draws within a replication (one per
    group), keeping replications order-independent.
    """
    if n < 2:
        raise ValidationError("bootstrap needs at least 2 observations")
    if not 0 <= replication_index < plan.replications:
        raise ValidationError("replication index out of range")
    rng = _stream(plan.master_seed, replication_index, stream)
    if plan.scheme == "multinomial":
        return rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
    if plan.scheme == "bayesian":
        e = rng.standard_exponential(n)
        return e / e.mean()
    if plan.scheme == "wild":
        if plan.wild_law == "exponential":
            return rng.standard_exponential(n)
        return rng.poisson(1.0, n).astype(float)
    if plan.scheme == "unit":
        return np.ones(n)
    k = plan.k
    if k >= n:
        raise ValidationError(f"k={k} must be smaller than n={n}")
    if plan.scheme == "k_of_n":
        return np.sqrt(n / k) * rng.multinomial(k, np.full(n, 1.0 / n)).astype(float)
    # subsample: the fixed value at k uniformly chosen positions
    value = n / np.sqrt((n - k) * k)
    out = np.zeros(n)
    out[rng.choice(n, size=k, replace=False)] = value
    return out


def _reweighted_dataset(dataset: GroupedDataset, plan: BootstrapPlan, b: int) -> GroupedDataset:
    samples = []
    for g in (0, 1):
        sample = dataset.group(g)
        e = gen_weights(plan, sample.size, b, stream=g)
        samples.append(sample.reweighted(e))
    return GroupedDataset(
        group0=samples[0],
        group1=samples[1],
        covariate_names=dataset.covariate_names,
        group_labels=dataset.group_labels,
    )


def _curve_values(result) -> np.ndarray:
    if isinstance(result, FunctionalCurve):
        return np.asarray(result.values, dtype=float)
    return np.asarray(result, dtype=float)


def bootstrap_curves(
    dataset: GroupedDataset,
    pipeline,
    plan: BootstrapPlan,
    n_jobs: int = 1,
) -> np.ndarray:
    """Pipeline recomputed under B weight draws; rows are replications.

    `pipeline` maps a GroupedDataset to a FunctionalCurve (or a plain
    value vector) and must be deterministic.  Replications whose refit
    raises a numerical error are dropped with a warning; more than 10%
    failures abort the whole call.  Successful rows keep replication
    order, so the result is identical for any n_jobs.
    """

    def one(b: int):
        try:
            return _curve_values(pipeline(_reweighted_dataset(dataset, plan, b)))
        except CfdistError as exc:
            return exc

    B = plan.replications
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]

    failures = [(b, r) for b, r in enumerate(results) if isinstance(r, Exception)]
    if failures:
        budget = 0.10 * B
        if len(failures) > budget:
            raise SolverError(
                f"{len(failures)} of {B} bootstrap replications failed "
                f"(first: {failures[0][1]}); exceeding the 10% budget"
            )
        warnings.warn(
            f"dropped {len(failures)} failed bootstrap replication(s) out of {B}",
            RuntimeWarning,
            stacklevel=2,
        )
    rows = [r for r in results if not isinstance(r, Exception)]
    out = np.asarray(rows, dtype=float)
    if out.ndim != 2:
        raise ValidationError("pipeline must return vectors of a fixed length")
    return out


def _pointwise_scale(estimate_values: np.ndarray, draws: np.ndarray) -> np.ndarray:
    q25, q75 = np.quantile(draws, [0.25, 0.75], axis=0)
    scale = (q75 - q25) / NORMAL_IQR
    pool = np.concatenate([draws.ravel(), estimate_values])
    value_range = float(pool.max() - pool.min())
    if not np.any(scale > 0.0) and value_range == 0.0:
        raise DegenerateDistributionError(
            "bootstrap draws show no variation anywhere; no band can be formed"
        )
    floor = np.finfo(float).eps * value_range
    return np.maximum(scale, floor)


@dataclass(frozen=True)
class UniformBand:
    estimate: FunctionalCurve
    lower: FunctionalCurve
    upper: FunctionalCurve
    level: float
    critical_value: float
    pointwise_se: FunctionalCurve

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "critical_value": self.critical_value,
            "estimate": self.estimate.to_dict(),
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "pointwise_se": self.pointwise_se.to_dict(),
        }


def uniform_band(estimate: FunctionalCurve, draws: np.ndarray, level: float) -> UniformBand:
    """Simultaneous band: estimate +/- critical * robust pointwise scale.

    The scale is the normalized bootstrap interquartile range (robust to
    the occasional wild replication at B around 100); the critical value
    is the empirical `level` quantile of the studentized sup deviations,
    taken with the `higher` method so bands nest across levels.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != estimate.values.size:
        raise ValidationError("draw matrix must be replications x grid length")
    if draws.shape[0] < 20:
        raise ValidationError("uniform bands need at least 20 bootstrap draws")
    if not 0.5 < level < 1.0:
        raise ValidationError("band level must lie in (0.5, 1)")
    scale = _pointwise_scale(estimate.values, draws)
    sups = np.max(np.abs(draws - estimate.values[None, :]) / scale[None, :], axis=1)
    critical = float(np.quantile(sups, level, method="higher"))
    half = critical * scale
    grid = estimate.index_grid
    return UniformBand(
        estimate=estimate,
        lower=FunctionalCurve(grid, estimate.values - half, f"{estimate.label}:lower"),
        upper=FunctionalCurve(grid, estimate.values + half, f"{estimate.label}:upper"),
        level=level,
        critical_value=critical,
        pointwise_se=FunctionalCurve(grid, scale, f"{estimate.label}:se"),
    )


NULLS = ("no_effect", "constant_effect", "positive_effect")


@dataclass(frozen=True)
class KSTestReport:
    null: str
    statistic: float
    p_value: float
    n_draws: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "null": self.null,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_draws": self.n_draws,
        }


def ks_tests(estimate: FunctionalCurve, draws: np.ndarray, null: str) -> KSTestReport:
    """Kolmogorov-Smirnov style sup tests of effect-curve hypotheses.

    no_effect: the curve is zero everywhere.  constant_effect: the curve
    is flat (its grid mean is removed before taking sups, on the
    estimate and on every centered draw).  positive_effect: the curve is
    nonnegative everywhere; only dips below zero count.

    The p-value is the share of studentized, recentred bootstrap sups
    exceeding the observed statistic.
    """
    if null not in NULLS:
        raise ValidationError(f"unknown null {null!r}; choose from {NULLS}")
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != estimate.values.size:
        raise ValidationError("draw matrix must be replications x grid length")
    scale = _pointwise_scale(estimate.values, draws)
    centered = draws - estimate.values[None, :]
    est = estimate.values
    if null == "no_effect":
        statistic = float(np.max(np.abs(est) / scale))
        sups = np.max(np.abs(centered) / scale[None, :], axis=1)
    elif null == "constant_effect":
        statistic = float(np.max(np.abs(est - est.mean()) / scale))
        demeaned = centered - centered.mean(axis=1, keepdims=True)
        sups = np.max(np.abs(demeaned) / scale[None, :], axis=1)
    else:
        statistic = float(np.max(np.maximum(-est, 0.0) / scale))
        sups = np.max(np.maximum(-centered, 0.0) / scale[None, :], axis=1)
    p_value = float(np.mean(sups > statistic))
    return KSTestReport(null=null, statistic=statistic, p_value=p_value, n_draws=draws.shape[0])
