"""Sequential decomposition of a distributional change into policy channels.

The change between the base-year (group 0) and recent-year (group 1)
outcome distributions is split into minimum-wage, deunionization,
composition, and price (wage-structure) effects by flipping one
ingredient at a time along a path of counterfactual states.

A state is a 4-tuple of year assignments (t, s, r, v):

    t  wage structure (which year's conditional model)
    s  minimum wage   (which year's minimum is imposed)
    r  unionization   (which year supplies F(union | z))
    v  composition    (which year supplies the covariate sample)

Every state's marginal distribution is estimated with the same mixture
construction - conditional model, union logit, covariate sample - so
that consecutive states differ in exactly one ingredient and identical
groups produce exactly zero components.  The observed endpoints are the
states (1,1,1,1) and (0,0,0,0).

The report's total is the sum of the components (the telescoping sum is
then an identity rather than a rounding casualty); it equals the direct
difference of the endpoint functionals up to float rounding.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .counterfactual import (
    FunctionalCurve,
    StepDistribution,
    gini,
    lorenz,
    mean,
    quantile_grid,
    variance,
)
from .data import GroupSample, GroupedDataset, default_u_grid, default_y_grid
from .estimators import (
    EstimatorConfig,
    _binary_mle_batch,
    add_intercept,
    as_distribution_model,
    fit_estimator,
    get_link,
    rearrange,
    PROB_CLAMP,
)
from .exceptions import DomainError, ValidationError
from .inference import BootstrapPlan, bootstrap_curves, uniform_band
from .wstats import cell_measures

STRATEGIES = ("ratio_scaling", "censoring")


@dataclass(frozen=True)
class MinWagePolicy:
    """Minimum-wage counterfactual strategy and the two wage floors.

    m_old is the base-year minimum expressed in outcome units, m_new the
    recent-year observed minimum.  The motivating case is m_old > m_new
    (a real-terms decline), but either ordering works.
    """

    strategy: str
    m_old: float
    m_new: float

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not (np.isfinite(self.m_old) and np.isfinite(self.m_new)):
            raise ValidationError("minimum wage levels must be finite")

    def threshold_for(self, minwage_group: int) -> float:
        return self.m_old if minwage_group == 0 else self.m_new


def _threshold_index(y_grid: np.ndarray, threshold: float) -> int:
    """Grid index for the wage floor: exact hit, else nearest point below."""
    idx = int(np.searchsorted(y_grid, threshold, side="right")) - 1
    if idx < 0:
        raise ValidationError(
            f"minimum wage {threshold} lies below the whole y-grid; no grid point below it"
        )
    if y_grid[idx] != threshold:
        warnings.warn(
            f"minimum wage {threshold} is not a grid point; using nearest grid point "
            f"below ({y_grid[idx]})",
            RuntimeWarning,
            stacklevel=3,
        )
    return idx


class MinWageCompositeModel:
    """Conditional CDF combining two years' models around a wage floor.

    ratio_scaling keeps the donor year's conditional shape below the
    floor, scaled so the two branches meet at the floor:

        F(y|x) = F_old(y|x) * F_new(m|x) / F_old(m|x)   for y < m
        F(y|x) = F_new(y|x)                             for y >= m

    censoring piles all sub-floor mass at the floor: F(y|x) = 0 below m.
    Both input models are evaluated in rearranged (monotone) form, which
    makes the assembled conditional CDF monotone by construction.
    """

    kind = "minwage_composite"

    def __init__(self, model_new, model_old, policy: MinWagePolicy, threshold: float):
        if not np.array_equal(model_new.y_grid, model_old.y_grid):
            raise ValidationError("minimum-wage combination needs a shared y-grid")
        if model_new.covariate_names != model_old.covariate_names:
            raise ValidationError("minimum-wage combination needs matching covariates")
        self.model_new = rearrange(model_new)
        self.model_old = rearrange(model_old)
        self.policy = policy
        self.threshold = threshold
        self.y_grid = model_new.y_grid
        self.covariate_names = model_new.covariate_names
        self.threshold_index = _threshold_index(self.y_grid, threshold)

    def cdf_matrix(self, covariates: np.ndarray) -> np.ndarray:
        ti = self.threshold_index
        f_new = self.model_new.cdf_matrix(covariates)
        if self.policy.strategy == "censoring":
            out = f_new.copy()
            out[:ti, :] = 0.0
            return out
        f_old = self.model_old.cdf_matrix(covariates)
        denom = f_old[ti, :]
        if np.any(denom == 0.0):
            bad = int(np.flatnonzero(denom == 0.0)[0])
            x = np.asarray(covariates, dtype=float)
            row = x[bad] if x.ndim > 1 else x[bad : bad + 1]
            raise DomainError(
                f"ratio strategy undefined: base-year CDF is zero at the wage floor for "
                f"covariate row {bad} (x = {np.array2string(np.atleast_1d(row))})"
            )
        tiny = int(np.count_nonzero(denom < 1e-6))
        if tiny:
            warnings.warn(
                f"ratio strategy: {tiny} covariate cell(s) have less than 1e-6 mass below "
                f"the wage floor in the base year",
                RuntimeWarning,
                stacklevel=2,
            )
        out = f_new.copy()
        out[:ti, :] = f_old[:ti, :] * (f_new[ti, :] / denom)[None, :]
        return out

    def extrapolation_fraction(self, covariates: np.ndarray) -> float:
        return max(
            self.model_new.extrapolation_fraction(covariates),
            self.model_old.extrapolation_fraction(covariates),
        )


def minwage_counterfactual_cdf(model_new, model_old, policy: MinWagePolicy) -> MinWageCompositeModel:
    """Conditional model for the recent year under the base-year wage floor."""
    return MinWageCompositeModel(model_new, model_old, policy, policy.m_old)


@dataclass(frozen=True)
class UnionLogit:
    """Weighted logistic fit of the union indicator on covariates."""

    coefficients: np.ndarray  # (q+1,), intercept first
    z_indices: tuple[int, ...]
    separated: bool

    def probabilities(self, z: np.ndarray) -> np.ndarray:
        link = get_link("logit")
        eta = add_intercept(z) @ self.coefficients
        eta = np.clip(eta, -link.index_cap, link.index_cap)
        return np.clip(link.cdf(eta), PROB_CLAMP[0], PROB_CLAMP[1])


def fit_union_logit(sample: GroupSample, union_index: int, z_indices) -> UnionLogit:
    """Logit of the designated binary column on the remaining covariates."""
    u = sample.covariates[:, union_index]
    if not np.all((u == 0.0) | (u == 1.0)):
        raise ValidationError("union column must be binary 0/1")
    z = sample.covariates[:, list(z_indices)]
    design = add_intercept(z)
    link = get_link("logit")
    beta, sep = _binary_mle_batch(design, sample.weights, u[None, :], link)
    return UnionLogit(coefficients=beta[0], z_indices=tuple(z_indices), separated=bool(sep[0]))


def union_reweighted_cdf(
    model,
    base_union_sample: GroupSample,
    covariate_sample: GroupSample,
    union_index: int,
    z_indices=None,
    probabilities=None,
) -> StepDistribution:
    """Marginal CDF integrating the model against F(union|z) x F(z).

    Each covariate row z contributes w * [p(z) F(y|1,z) + (1-p(z)) F(y|0,z)]
    with p from a logit fitted on the base sample (or supplied directly
    through `probabilities`, e.g. the observed indicators).  The sum is
    rearranged into a monotone CDF.
    """
    names = model.covariate_names
    if not 0 <= union_index < len(names):
        raise ValidationError("union column index out of range")
    if z_indices is None:
        z_indices = tuple(i for i in range(len(names)) if i != union_index)
    x = np.asarray(covariate_sample.covariates, dtype=float)
    if probabilities is None:
        logit = fit_union_logit(base_union_sample, union_index, z_indices)
        p = logit.probabilities(x[:, list(logit.z_indices)])
    else:
        p = np.asarray(probabilities, dtype=float)
        if p.shape != (x.shape[0],) or np.any(p < 0) or np.any(p > 1):
            raise ValidationError("probabilities must be per-row values in [0, 1]")
    x1 = x.copy()
    x1[:, union_index] = 1.0
    x0 = x.copy()
    x0[:, union_index] = 0.0
    f1 = model.cdf_matrix(x1)
    f0 = model.cdf_matrix(x0)
    mixture = f1 * p[None, :] + f0 * (1.0 - p)[None, :]
    values = np.sort(mixture @ covariate_sample.weights)
    diag = {"extrapolated_fraction": model.extrapolation_fraction(x1)}
    return StepDistribution(model.y_grid, values, diag)


# State coordinates, their flip order per decomposition order, and the
# component each flip is named after.
_COORDS = ("t", "s", "r", "v")
FLIP_ORDERS = {"standard": ("s", "r", "v", "t"), "reverse": ("t", "v", "r", "s")}
COMPONENT_NAMES = {
    "s": "minimum_wage",
    "r": "deunionization",
    "v": "composition",
    "t": "price",
}

SCALAR_FUNCTIONALS = ("gini", "mean", "variance", "std", "iqr", "p90_p10", "p90_p50", "p50_p10")
CURVE_FUNCTIONALS = ("cdf", "quantile", "lorenz")


@dataclass(frozen=True)
class DecompositionConfig:
    """Everything decompose needs beyond the dataset itself."""

    estimator: EstimatorConfig
    policy: MinWagePolicy
    union_col: str
    union_z_cols: tuple[str, ...] | None = None
    functional: str = "quantile"
    order: str = "standard"
    u_grid: np.ndarray | None = None
    y_grid: np.ndarray | None = None

    def __post_init__(self):
        if self.order not in FLIP_ORDERS:
            raise ValidationError(f"unknown order {self.order!r}; choose from {tuple(FLIP_ORDERS)}")
        if self.functional not in SCALAR_FUNCTIONALS + CURVE_FUNCTIONALS:
            raise ValidationError(
                f"unknown functional {self.functional!r}; choose from "
                f"{SCALAR_FUNCTIONALS + CURVE_FUNCTIONALS}"
            )


@dataclass(frozen=True)
class DecompositionReport:
    functional: str
    order: str
    total: object  # FunctionalCurve or float
    components: tuple  # ordered ((name, FunctionalCurve | float), ...)
    state_labels: tuple[str, ...]
    bands: dict | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        def value_doc(v):
            if isinstance(v, FunctionalCurve):
                return v.to_dict()
            return float(v)

        doc = {
            "functional": self.functional,
            "order": self.order,
            "total": value_doc(self.total),
            "components": [[name, value_doc(v)] for name, v in self.components],
            "state_labels": list(self.state_labels),
        }
        if self.bands is not None:
            doc["bands"] = {name: band.to_dict() for name, band in self.bands.items()}
        return doc


def _resolve_columns(dataset: GroupedDataset, config: DecompositionConfig):
    names = dataset.covariate_names
    if config.union_col not in names:
        raise ValidationError(f"union column {config.union_col!r} is not a covariate")
    union_index = names.index(config.union_col)
    if config.union_z_cols is None:
        z_indices = tuple(i for i in range(len(names)) if i != union_index)
    else:
        missing = [c for c in config.union_z_cols if c not in names]
        if missing:
            raise ValidationError(f"union_z_cols not among covariates: {missing}")
        z_indices = tuple(names.index(c) for c in config.union_z_cols)
    return union_index, z_indices


def _grids(dataset: GroupedDataset, config: DecompositionConfig):
    u = config.u_grid if config.u_grid is not None else default_u_grid()
    y = config.y_grid if config.y_grid is not None else default_y_grid(dataset)
    return np.asarray(u, dtype=float), np.asarray(y, dtype=float)


def five_distributions(dataset: GroupedDataset, config: DecompositionConfig):
    """The five state marginals along the configured flip path.

    Returns (labels, distributions) in path order, from the recent-year
    observed state to the base-year observed state.
    """
    u_grid, y_grid = _grids(dataset, config)
    union_index, z_indices = _resolve_columns(dataset, config)

    models = {}
    for g in (0, 1):
        fitted = fit_estimator(dataset.group(g), config.estimator, u_grid, y_grid)
        models[g] = rearrange(as_distribution_model(fitted, y_grid))
    logits = {g: fit_union_logit(dataset.group(g), union_index, z_indices) for g in (0, 1)}

    def structure_model(t: int, s: int):
        if t == s:
            return models[t]
        return MinWageCompositeModel(
            models[t], models[s], config.policy, config.policy.threshold_for(s)
        )

    state = {c: 1 for c in _COORDS}
    states = [dict(state)]
    for coord in FLIP_ORDERS[config.order]:
        state[coord] = 0
        states.append(dict(state))

    labels, dists = [], []
    lab = dataset.group_labels
    for st in states:
        t, s, r, v = st["t"], st["s"], st["r"], st["v"]
        struct = structure_model(t, s)
        cov_sample = dataset.group(v)
        p = logits[r].probabilities(cov_sample.covariates[:, list(z_indices)])
        dist = union_reweighted_cdf(
            struct, dataset.group(r), cov_sample, union_index, z_indices, probabilities=p
        )
        labels.append(f"Y:{lab[t]} m:{lab[s]} U:{lab[r]} Z:{lab[v]}")
        dists.append(dist)
    return tuple(labels), tuple(dists)


def _lorenz_on_grid(dist: StepDistribution, y_grid: np.ndarray) -> np.ndarray:
    return np.array([lorenz(dist, y) for y in y_grid])


def apply_functional(dist: StepDistribution, functional: str, u_grid, y_grid):
    """Evaluate one named functional; curves share the configured grids."""
    if functional == "cdf":
        return FunctionalCurve(y_grid, dist.cdf_at(y_grid), "cdf")
    if functional == "quantile":
        vals, _ = quantile_grid(dist, u_grid)
        return FunctionalCurve(u_grid, vals, "quantile")
    if functional == "lorenz":
        return FunctionalCurve(y_grid, _lorenz_on_grid(dist, y_grid), "lorenz")
    if functional == "gini":
        return gini(dist)
    if functional == "mean":
        return mean(dist)
    if functional == "variance":
        return variance(dist)
    if functional == "std":
        return float(np.sqrt(variance(dist)))
    quantile_pairs = {"iqr": (0.75, 0.25), "p90_p10": (0.9, 0.1), "p90_p50": (0.9, 0.5), "p50_p10": (0.5, 0.1)}
    hi, lo = quantile_pairs[functional]
    vals, _ = quantile_grid(dist, np.array([hi, lo]))
    return float(vals[0] - vals[1])


def _component_difference(a, b):
    if isinstance(a, FunctionalCurve):
        return FunctionalCurve(a.index_grid, a.values - b.values, a.label)
    return a - b


def _component_sum(values):
    acc = values[0]
    for v in values[1:]:
        if isinstance(acc, FunctionalCurve):
            acc = FunctionalCurve(acc.index_grid, acc.values + v.values, acc.label)
        else:
            acc = acc + v
    return acc


def decompose(
    dataset: GroupedDataset,
    config: DecompositionConfig,
    plan: BootstrapPlan | None = None,
    level: float = 0.9,
    n_jobs: int = 1,
) -> DecompositionReport:
    """Four-component decomposition of the configured functional.

    Components are consecutive differences of the functional along the
    flip path; the reported total is their sum, so the telescoping
    identity holds exactly.  With a bootstrap plan, every component and
    the total get uniform bands from full re-runs of the decomposition.
    """
    u_grid, y_grid = _grids(dataset, config)
    # Freeze data-derived grids now so bootstrap re-runs evaluate on the
    # point estimate's grids rather than grids of the reweighted data.
    config = replace(config, u_grid=u_grid, y_grid=y_grid)
    labels, dists = five_distributions(dataset, config)
    phis = [apply_functional(d, config.functional, u_grid, y_grid) for d in dists]
    names = tuple(COMPONENT_NAMES[c] for c in FLIP_ORDERS[config.order])
    comps = [(_name, _component_difference(phis[i], phis[i + 1])) for i, _name in enumerate(names)]
    total = _component_sum([v for _, v in comps])
    diagnostics = {
        "extrapolated_fraction": max(d.diagnostics.get("extrapolated_fraction", 0.0) for d in dists),
    }

    bands = None
    if plan is not None:
        curve_like = isinstance(total, FunctionalCurve)
        width = total.values.size if curve_like else 1

        def flat(report_values):
            parts = [report_values["total"]] + [report_values[n] for n in names]
            return np.concatenate(
                [p.values if isinstance(p, FunctionalCurve) else np.array([p]) for p in parts]
            )

        def pipeline(d):
            _, dd = five_distributions(d, config)
            ph = [apply_functional(x, config.functional, u_grid, y_grid) for x in dd]
            cc = {names[i]: _component_difference(ph[i], ph[i + 1]) for i in range(4)}
            cc["total"] = _component_sum(list(cc.values()))
            return flat(cc)

        point = dict(comps)
        point["total"] = total
        draws = bootstrap_curves(dataset, pipeline, plan, n_jobs=n_jobs)
        bands = {}
        for j, name in enumerate(["total", *names]):
            seg = draws[:, j * width : (j + 1) * width]
            val = point[name]
            grid = val.index_grid if curve_like else np.array([0.0])
            vals = val.values if curve_like else np.array([val])
            est_curve = FunctionalCurve(grid, vals, f"{config.functional}:{name}")
            bands[name] = uniform_band(est_curve, seg, level)

    return DecompositionReport(
        functional=config.functional,
        order=config.order,
        total=total,
        components=tuple(comps),
        state_labels=labels,
        bands=bands,
        diagnostics=diagnostics,
    )


def order_sensitivity(dataset: GroupedDataset, config: DecompositionConfig) -> dict:
    """Per-component gap between the standard and reverse orders.

    The total is order-free; the components are not.  Returns
    component name -> (standard value - reverse value).
    """
    std = decompose(dataset, replace(config, order="standard"))
    rev = decompose(dataset, replace(config, order="reverse"))
    std_map = dict(std.components)
    rev_map = dict(rev.components)
    return {name: _component_difference(std_map[name], rev_map[name]) for name in std_map}


def variance_channels(model, covariate_sample: GroupSample):
    """Split Var[Y] into between-x and within-x channels for a QR model.

    With Y = x'beta(U), U uniform and independent of X, the law of total
    variance gives

        Var[Y] = bbar' Var[X] bbar + trace(E[XX'] Var[beta(U)])

    where bbar and Var[beta(U)] are u-cell-weighted moments of the
    coefficient path.  Returns (between, within).
    """
    if getattr(model, "kind", None) != "quantile_regression":
        raise ValidationError("variance channels require a quantile_regression model")
    cells = cell_measures(model.u_grid)
    coef = model.coefficients  # (m, p+1)
    bbar = cells @ coef
    centered = coef - bbar[None, :]
    vbeta = (centered * cells[:, None]).T @ centered
    design = add_intercept(covariate_sample.covariates)
    w = covariate_sample.weights
    xbar = w @ design
    xc = design - xbar[None, :]
    cov_x = (xc * w[:, None]).T @ xc
    m2_x = (design * w[:, None]).T @ design
    between = float(bbar @ cov_x @ bbar)
    within = float(np.trace(m2_x @ vbeta))
    return between, within


def smooth_curve(curve: FunctionalCurve, bandwidth: float = 0.015) -> FunctionalCurve:
    """Gaussian-kernel smooth in the curve's index units, for display only.

    Estimates and tests always use the raw curve; smoothing exists so
    plotted quantile-effect curves do not show step artifacts.
    """
    if bandwidth <= 0:
        raise ValidationError("bandwidth must be positive")
    g = curve.index_grid
    diff = (g[:, None] - g[None, :]) / bandwidth
    k = np.exp(-0.5 * diff * diff)
    smoothed = (k @ curve.values) / k.sum(axis=1)
    return FunctionalCurve(g, smoothed, f"{curve.label}:smoothed", dict(curve.diagnostics))
