"""Counterfactual marginal distributions and their functionals.

A counterfactual marginal pairs the conditional outcome model of one
group with the empirical covariate distribution of another (optionally
pushed through a covariate transform), integrating the conditional CDF
against the covariate sample:

    F(y) = sum_i w_i F(y | g(x_i))

Everything downstream is a functional of the resulting step CDF:
left-inverse quantiles, quantile and distribution effects against a
baseline, Lorenz curves and Gini, moments, and (under conditional rank
preservation) the distribution of quantile treatment effects.

Covariate integrals are exact weighted sums over the sample in sample
order; no smoothing and no reordering, so results are bit reproducible.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import GroupedDataset, GroupSample
from .estimators import (
    ConditionalDistributionModel,
    ConditionalQuantileModel,
    as_distribution_model,
)
from .exceptions import DomainError, ValidationError
from .wstats import cell_measures, quantiles_from_cdf


@dataclass(frozen=True)
class CounterfactualSpec:
    """Which group supplies the conditional model and which the covariates."""

    conditional_group: int
    covariate_group: int
    covariate_transform: object = None  # callable (n, p) -> (n, q), or None

    def __post_init__(self):
        for name in ("conditional_group", "covariate_group"):
            if getattr(self, name) not in (0, 1):
                raise ValidationError(f"{name} must be 0 or 1")
        if self.covariate_transform is not None and not callable(self.covariate_transform):
            raise ValidationError("covariate_transform must be callable or None")

    @property
    def is_identity(self) -> bool:
        return self.conditional_group == self.covariate_group and self.covariate_transform is None


def apply_transform(spec: CounterfactualSpec, covariates: np.ndarray, model) -> np.ndarray:
    """Transform the covariate matrix and check it fits the model."""
    x = np.asarray(covariates, dtype=float)
    if spec.covariate_transform is not None:
        x = np.asarray(spec.covariate_transform(x), dtype=float)
        if x.ndim == 1:
            x = x[:, None]
    expected = len(model.covariate_names)
    if x.shape[1] != expected:
        raise ValidationError(
            f"transform produced {x.shape[1]} covariates but the model expects {expected}"
        )
    return x


@dataclass(frozen=True)
class StepDistribution:
    """Right-continuous step CDF on a sorted grid."""

    y_grid: np.ndarray
    cdf_values: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y_grid, dtype=float))
        f = np.ascontiguousarray(np.asarray(self.cdf_values, dtype=float))
        if y.ndim != 1 or f.shape != y.shape:
            raise ValidationError("grid and CDF values must be 1-D and equally long")
        if y.size == 0:
            raise ValidationError("empty distribution grid")
        if np.any(np.diff(y) <= 0):
            raise ValidationError("distribution grid must be strictly increasing")
        if np.any(f < -1e-12) or np.any(f > 1.0 + 1e-12) or np.any(np.diff(f) < -1e-12):
            raise ValidationError("CDF values must be nondecreasing within [0, 1]")
        # Exact-ify: tiny negative diffs and clamp dust are rounding noise.
        f = np.clip(np.maximum.accumulate(f), 0.0, 1.0)
        y.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "y_grid", y)
        object.__setattr__(self, "cdf_values", f)

    @classmethod
    def from_atoms(cls, values, masses, diagnostics=None) -> "StepDistribution":
        v = np.asarray(values, dtype=float)
        m = np.asarray(masses, dtype=float)
        if np.any(m < 0):
            raise ValidationError("atom masses must be nonnegative")
        total = m.sum()
        if total <= 0:
            raise ValidationError("atom masses must have positive total")
        order = np.argsort(v, kind="stable")
        v, m = v[order], m[order]
        grid, start = np.unique(v, return_index=True)
        agg = np.add.reduceat(m, start) / total
        return cls(grid, np.cumsum(agg), diagnostics or {})

    def atom_masses(self) -> np.ndarray:
        return np.diff(self.cdf_values, prepend=0.0)

    def atoms(self):
        """Positive-mass support points and their masses."""
        m = self.atom_masses()
        keep = m > 0.0
        return self.y_grid[keep], m[keep]

    def cdf_at(self, y) -> np.ndarray:
        """Step-function evaluation F(y), zero left of the grid."""
        idx = np.searchsorted(self.y_grid, np.asarray(y, dtype=float), side="right")
        padded = np.concatenate([[0.0], self.cdf_values])
        return padded[idx]

    def total_mass(self) -> float:
        return float(self.cdf_values[-1])

    def to_dict(self) -> dict:
        return {
            "y_grid": self.y_grid.tolist(),
            "cdf_values": self.cdf_values.tolist(),
            "diagnostics": dict(self.diagnostics),
        }


@dataclass(frozen=True)
class FunctionalCurve:
    """A functional evaluated on a grid (u-probabilities or y-values)."""

    index_grid: np.ndarray
    values: np.ndarray
    label: str
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.index_grid, dtype=float))
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if g.shape != v.shape or g.ndim != 1:
            raise ValidationError("curve grid and values must be 1-D and equally long")
        g.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "index_grid", g)
        object.__setattr__(self, "values", v)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "index_grid": self.index_grid.tolist(),
            "values": self.values.tolist(),
            "diagnostics": dict(self.diagnostics),
        }


def marginal_cdf(model, dataset: GroupedDataset, spec: CounterfactualSpec, y_grid) -> StepDistribution:
    """Counterfactual marginal CDF on y_grid.

    The conditional CDF matrix is integrated against the covariate-group
    sample in sample order, then monotonized by rearrangement (sorting),
    which leaves already-monotone estimates untouched.  The fraction of
    covariate rows outside the training bounding box is reported as the
    `extrapolated_fraction` diagnostic.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    dist_model = as_distribution_model(model, y_grid)
    sample = dataset.group(spec.covariate_group)
    x = apply_transform(spec, sample.covariates, dist_model)
    fmat = dist_model.cdf_matrix(x)
    values = fmat @ sample.weights
    values = np.sort(values)
    diag = {"extrapolated_fraction": dist_model.extrapolation_fraction(x)}
    return StepDistribution(y_grid, values, diag)


def quantile(dist: StepDistribution, u: float) -> float:
    """Left-inverse quantile: the smallest grid y with F(y) >= u.

    When u exceeds the CDF everywhere on the grid the largest grid point
    is returned and a RuntimeWarning flags the underflow.
    """
    if not 0.0 < u < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {u}")
    vals, underflow = quantiles_from_cdf(dist.y_grid, dist.cdf_values, np.array([u]))
    if underflow[0]:
        warnings.warn(
            f"quantile level {u} exceeds the CDF on the whole grid; returning max grid point",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(vals[0])


def quantile_grid(dist: StepDistribution, u_grid):
    """Vectorized left-inverse quantiles with an underflow mask."""
    u = np.asarray(u_grid, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValidationError("quantile levels must lie in (0, 1)")
    return quantiles_from_cdf(dist.y_grid, dist.cdf_values, u)


def quantile_curve(dist: StepDistribution, u_grid, label: str = "quantile") -> FunctionalCurve:
    vals, underflow = quantile_grid(dist, u_grid)
    diag = {"underflow_fraction": float(np.mean(underflow))}
    return FunctionalCurve(np.asarray(u_grid, dtype=float), vals, label, diag)


def quantile_effect(dist_a: StepDistribution, dist_b: StepDistribution, u_grid) -> FunctionalCurve:
    """QE(u) = Q_a(u) - Q_b(u), counterfactual minus baseline."""
    qa, under_a = quantile_grid(dist_a, u_grid)
    qb, under_b = quantile_grid(dist_b, u_grid)
    diag = {"underflow_fraction": float(np.mean(under_a | under_b))}
    return FunctionalCurve(np.asarray(u_grid, dtype=float), qa - qb, "QE", diag)


def distribution_effect(dist_a: StepDistribution, dist_b: StepDistribution, y_grid) -> FunctionalCurve:
    """DE(y) = F_a(y) - F_b(y) by step-function evaluation."""
    y = np.asarray(y_grid, dtype=float)
    return FunctionalCurve(y, dist_a.cdf_at(y) - dist_b.cdf_at(y), "DE")


def _nonnegative_atoms(dist: StepDistribution):
    values, masses = dist.atoms()
    negative = values < 0.0
    if np.any(negative):
        # Clamp dust from link evaluation can deposit ~1e-10 of mass on a
        # grid point below zero; that is noise, not signal.
        if masses[negative].sum() > 1e-9:
            raise DomainError("Lorenz functionals need all mass on nonnegative outcomes")
        values, masses = values[~negative], masses[~negative]
    total = masses.sum()
    if total <= 0:
        raise DomainError("distribution carries no mass on the grid")
    return values, masses / total


def lorenz(dist: StepDistribution, y: float) -> float:
    """L(y): share of the total outcome owned by units at or below y."""
    values, masses = _nonnegative_atoms(dist)
    mu = float(values @ masses)
    if mu <= 0:
        raise DomainError("Lorenz functionals need a positive mean")
    return float(values[values <= y] @ masses[values <= y] / mu)


def lorenz_curve(dist: StepDistribution) -> FunctionalCurve:
    """Piecewise-linear Lorenz curve knots, indexed by cumulative probability."""
    values, masses = _nonnegative_atoms(dist)
    mu = float(values @ masses)
    if mu <= 0:
        raise DomainError("Lorenz functionals need a positive mean")
    p = np.concatenate([[0.0], np.cumsum(masses)])
    p[-1] = 1.0
    partial = np.concatenate([[0.0], np.cumsum(values * masses) / mu])
    partial[-1] = 1.0
    return FunctionalCurve(p, partial, "lorenz")


def gini(dist: StepDistribution) -> float:
    """1 - 2 * integral of the Lorenz curve over the probability index."""
    curve = lorenz_curve(dist)
    area = np.trapezoid(curve.values, curve.index_grid)
    return float(1.0 - 2.0 * area)


def mean(dist: StepDistribution) -> float:
    values, masses = dist.atoms()
    total = masses.sum()
    if total <= 0:
        raise DomainError("distribution carries no mass on the grid")
    return float(values @ masses / total)


def variance(dist: StepDistribution) -> float:
    values, masses = dist.atoms()
    total = masses.sum()
    if total <= 0:
        raise DomainError("distribution carries no mass on the grid")
    m1 = values @ masses / total
    return float((values - m1) ** 2 @ masses / total)


def default_delta_grid(deltas: np.ndarray, n_points: int = 401) -> np.ndarray:
    """Equispaced grid spanning [min - range, max + range] of the effects.

    A numerically constant effect (range below 1e-9 of scale) gets a grid
    built from two half-linspaces so the constant itself is a grid point;
    a plain linspace misses the center by a few ulps, which would smear a
    point mass across two grid cells.
    """
    lo, hi = float(np.min(deltas)), float(np.max(deltas))
    span = hi - lo
    scale = max(1.0, abs(lo), abs(hi))
    if span <= 1e-9 * scale:
        c = 0.5 * (lo + hi)
        pad = max(1.0, abs(c))
        half = (n_points + 1) // 2
        left = np.linspace(c - pad, c, half)
        right = np.linspace(c, c + pad, n_points - half + 1)
        return np.concatenate([left, right[1:]])
    return np.linspace(lo - span, hi + span, n_points)


def effect_distribution(
    model0: ConditionalQuantileModel,
    model1_or_transform,
    dataset: GroupedDataset,
    u_grid=None,
    delta_grid=None,
) -> StepDistribution:
    """Distribution of quantile effects under conditional rank preservation.

    Q_delta(u|x) is Q1(u|x) - Q0(u|x) for a second model, or
    Q0(u|g(x)) - Q0(u|x) for a covariate transform; both conditional
    quantile functions are monotonized (sorted in u) first, since rank
    preservation compares proper quantile functions.  F_delta averages
    1{Q_delta <= delta} over u-cells and the group-0 covariate sample.

    Rank preservation itself is an assumption, not testable here; the
    caller owns its plausibility.
    """
    if not isinstance(model0, ConditionalQuantileModel):
        raise ValidationError("effect distributions require quantile-representation models")
    sample = dataset.group(0)
    x0 = np.asarray(sample.covariates, dtype=float)
    q0 = np.sort(model0.quantile_matrix(x0), axis=0)
    if isinstance(model1_or_transform, ConditionalQuantileModel):
        model1 = model1_or_transform
        if model1.u_grid.shape != model0.u_grid.shape or not np.array_equal(
            model1.u_grid, model0.u_grid
        ):
            raise ValidationError("effect distributions require a shared u-grid")
        q1 = np.sort(model1.quantile_matrix(x0), axis=0)
    elif callable(model1_or_transform):
        g = np.asarray(model1_or_transform(x0), dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.shape[1] != len(model0.covariate_names):
            raise ValidationError(
                f"transform produced {g.shape[1]} covariates but the model expects "
                f"{len(model0.covariate_names)}"
            )
        q1 = np.sort(model0.quantile_matrix(g), axis=0)
    else:
        raise ValidationError("second argument must be a quantile model or a covariate transform")
    if u_grid is not None:
        u = np.asarray(u_grid, dtype=float)
        if u.shape != model0.u_grid.shape or not np.array_equal(u, model0.u_grid):
            raise ValidationError("u_grid must match the models' fitting grid")

    deltas = q1 - q0  # (m_u, n)
    if delta_grid is None:
        delta_grid = default_delta_grid(deltas)
    else:
        delta_grid = np.asarray(delta_grid, dtype=float)
    cells = cell_measures(model0.u_grid)
    # F(delta) = sum_i w_i sum_u cell_u 1{delta_ui <= delta}: pool the
    # atoms with product weights and accumulate on the grid.
    atom_mass = cells[:, None] * sample.weights[None, :]
    idx = np.searchsorted(delta_grid, deltas.ravel(), side="left")
    hist = np.bincount(idx, weights=atom_mass.ravel(), minlength=delta_grid.size + 1)
    # Summing m*n products leaves ~1e-14 of dust on the total; normalize
    # so a grid covering the whole effect support ends at exactly 1.
    total = hist.sum()
    cdf = np.cumsum(hist[: delta_grid.size]) / total
    overflow = float(hist[delta_grid.size] / total) if hist.size > delta_grid.size else 0.0
    diag = {"mass_above_grid": overflow}
    return StepDistribution(delta_grid, np.clip(cdf, 0.0, 1.0), diag)
