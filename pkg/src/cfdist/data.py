"""Dataset ingestion and evaluation grids.

A study ships as a single CSV with an outcome column, covariate columns,
an optional sampling-weight column, and a two-valued group column.  The
two groups play asymmetric roles downstream (group 0 is the status quo),
so the loader fixes the label-to-index mapping by ascending lexicographic
order of the raw labels unless the caller overrides it.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import ParseError, SchemaError, ValidationError
from .wstats import normalize_weights
from ._jsonio import FLOAT_FORMAT


@dataclass(frozen=True)
class Observation:
    """One row of a group sample."""

    outcome: float
    covariates: tuple[float, ...]
    weight: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GroupSample:
    """All observations of one group, stored columnar.

    Weights are normalized to sum to one within the group.  Arrays are
    immutable after construction.
    """

    outcomes: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        x = np.asarray(self.covariates, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or w.ndim != 1:
            raise ValidationError("outcomes/weights must be 1-d, covariates 2-d")
        if not (len(y) == len(w) == x.shape[0]):
            raise ValidationError("outcome, covariate, and weight lengths differ")
        if len(y) == 0:
            raise ValidationError("a group sample cannot be empty")
        if not np.isfinite(y).all() or not np.isfinite(x).all() or not np.isfinite(w).all():
            raise ValidationError("non-finite values in group sample")
        if (w < 0).any():
            raise ValidationError("negative sampling weight")
        if w.sum() <= 0:
            raise ValidationError("each group needs at least one positive weight")
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "weights", _frozen(normalize_weights(w)))

    @property
    def size(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def observations(self):
        for i in range(self.size):
            yield Observation(
                float(self.outcomes[i]),
                tuple(float(v) for v in self.covariates[i]),
                float(self.weights[i]),
            )

    @classmethod
    def from_observations(cls, obs) -> "GroupSample":
        obs = list(obs)
        return cls(
            outcomes=np.array([o.outcome for o in obs], dtype=float),
            covariates=np.array([o.covariates for o in obs], dtype=float),
            weights=np.array([o.weight for o in obs], dtype=float),
        )

    def reweighted(self, multipliers: np.ndarray) -> "GroupSample":
        """Multiply weights elementwise and renormalize (bootstrap support)."""
        m = np.asarray(multipliers, dtype=float)
        if m.shape != self.weights.shape:
            raise ValidationError("multiplier length does not match group size")
        if (m < 0).any():
            raise ValidationError("negative weight multiplier")
        return GroupSample(self.outcomes, self.covariates, self.weights * m)


@dataclass(frozen=True)
class GroupedDataset:
    """Two group samples sharing one covariate schema."""

    group0: GroupSample
    group1: GroupSample
    covariate_names: tuple[str, ...]
    group_labels: tuple[str, str] = ("0", "1")

    def __post_init__(self):
        p = len(self.covariate_names)
        if self.group0.n_covariates != p or self.group1.n_covariates != p:
            raise ValidationError("covariate name count does not match matrix width")
        if len(set(self.covariate_names)) != p:
            raise ValidationError("duplicate covariate names")

    def group(self, k: int) -> GroupSample:
        if k == 0:
            return self.group0
        if k == 1:
            return self.group1
        raise ValidationError(f"group index must be 0 or 1, got {k}")

    def pooled_outcomes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outcomes and normalized weights pooled across both groups."""
        y = np.concatenate([self.group0.outcomes, self.group1.outcomes])
        w = np.concatenate([self.group0.weights, self.group1.weights])
        return y, w / 2.0

    def column(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown covariate column {name!r}") from None


def _numeric_column(raw: pd.Series, name: str) -> np.ndarray:
    stripped = raw.astype(str).str.strip()
    values = pd.to_numeric(stripped, errors="coerce")
    bad = values.isna() | stripped.eq("")
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"column {name!r}, data row {row}: cannot parse {raw.iloc[row]!r} as a number"
        )
    arr = values.to_numpy(dtype=float)
    if not np.isfinite(arr).all():
        row = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ParseError(f"column {name!r}, data row {row}: non-finite value rejected")
    return arr


def load_csv(
    path,
    outcome_col: str,
    covariate_cols: list[str],
    group_col: str,
    weight_col: str | None = None,
    group_order: tuple[str, str] | None = None,
) -> GroupedDataset:
    """Load a grouped dataset from a UTF-8 CSV file.

    Parameters
    ----------
    path : str or pathlib.Path
    outcome_col, covariate_cols, group_col, weight_col : column names;
        `weight_col=None` assigns unit weights.
    group_order : optional explicit (label0, label1) pair overriding the
        default ascending lexicographic mapping.
    """
    try:
        frame = pd.read_csv(path, dtype=str, encoding="utf-8", keep_default_na=False)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read CSV {path}: {exc}") from exc
    if frame.columns.duplicated().any():
        dup = frame.columns[frame.columns.duplicated()][0]
        raise SchemaError(f"duplicate header column {dup!r}")
    needed = [outcome_col, *covariate_cols, group_col] + ([weight_col] if weight_col else [])
    for col in needed:
        if col not in frame.columns:
            raise SchemaError(f"missing required column {col!r}")
    if len(set(covariate_cols)) != len(covariate_cols):
        raise SchemaError("covariate column list contains duplicates")
    if frame.shape[0] == 0:
        raise ValidationError("CSV contains no data rows")

    labels_raw = frame[group_col].astype(str).str.strip()
    labels = sorted(labels_raw.unique())
    if len(labels) != 2:
        raise SchemaError(
            f"group column {group_col!r} must carry exactly two distinct labels, found {len(labels)}"
        )
    if group_order is not None:
        if sorted(group_order) != labels:
            raise SchemaError(
                f"group_order {group_order} does not match labels found {tuple(labels)}"
            )
        labels = list(group_order)

    y = _numeric_column(frame[outcome_col], outcome_col)
    x = np.column_stack([_numeric_column(frame[c], c) for c in covariate_cols]) if covariate_cols else np.empty((len(y), 0))
    w = _numeric_column(frame[weight_col], weight_col) if weight_col else np.ones(len(y))
    if (w < 0).any():
        row = int(np.flatnonzero(w < 0)[0])
        raise ValidationError(f"negative weight at data row {row}")

    samples = []
    for lab in labels:
        mask = (labels_raw == lab).to_numpy()
        if not mask.any():
            raise ValidationError(f"group {lab!r} has no rows")
        samples.append(GroupSample(y[mask], x[mask], w[mask]))
    return GroupedDataset(samples[0], samples[1], tuple(covariate_cols), (labels[0], labels[1]))


def write_csv(dataset: GroupedDataset, path) -> None:
    """Write a dataset back to CSV (normalized weights, mapped labels)."""
    cols = ["outcome", *dataset.covariate_names, "weight", "group"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for k in (0, 1):
            g = dataset.group(k)
            label = dataset.group_labels[k]
            for i in range(g.size):
                cells = [format(g.outcomes[i], FLOAT_FORMAT)]
                cells += [format(v, FLOAT_FORMAT) for v in g.covariates[i]]
                cells.append(format(g.weights[i], FLOAT_FORMAT))
                cells.append(label)
                fh.write(",".join(cells) + "\n")


def reload_csv(dataset: GroupedDataset, path) -> GroupedDataset:
    """Round-trip helper: write `dataset` to `path` and load it again."""
    write_csv(dataset, path)
    return load_csv(
        path,
        outcome_col="outcome",
        covariate_cols=list(dataset.covariate_names),
        group_col="group",
        weight_col="weight",
        group_order=dataset.group_labels,
    )


def default_u_grid(step: float = 0.001, lo: float = 0.02, hi: float = 0.98) -> np.ndarray:
    """Equispaced quantile-index grid on [lo, hi]."""
    if not (0.0 < lo < hi < 1.0):
        raise ValidationError("u-grid bounds must satisfy 0 < lo < hi < 1")
    count = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, count)


def default_y_grid(dataset: GroupedDataset, n_points: int = 100) -> np.ndarray:
    """Outcome grid: all distinct pooled values, or pooled quantiles.

    If the pooled outcome has at most `n_points` distinct values the grid
    is exactly those values; otherwise it is the left-inverse pooled
    quantiles at `n_points` equispaced probabilities (with 0 mapped to
    the minimum), deduplicated.
    """
    if n_points < 2:
        raise ValidationError("y-grid needs at least two points")
    y, w = dataset.pooled_outcomes()
    distinct = np.unique(y)
    if distinct.size < 2:
        raise ValidationError("outcome is constant; no usable y-grid")
    if distinct.size <= n_points:
        return distinct
    from .wstats import weighted_quantiles

    probs = np.linspace(0.0, 1.0, n_points)
    vals = weighted_quantiles(y, w, probs[1:])
    grid = np.unique(np.concatenate(([distinct[0]], vals)))
    return grid


@dataclass(frozen=True)
class EvaluationGrids:
    """Quantile-index and outcome grids used by estimators and functionals."""

    u_grid: np.ndarray = field(default_factory=default_u_grid)
    y_grid: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u_grid, dtype=float)
        if u.ndim != 1 or u.size == 0:
            raise ValidationError("u_grid must be a nonempty 1-d array")
        if (np.diff(u) <= 0).any():
            raise ValidationError("u_grid must be strictly increasing")
        if u[0] <= 0.0 or u[-1] >= 1.0:
            raise ValidationError("u_grid must lie strictly inside (0, 1)")
        object.__setattr__(self, "u_grid", _frozen(u))
        if self.y_grid is not None:
            y = np.asarray(self.y_grid, dtype=float)
            if y.ndim != 1 or y.size < 2:
                raise ValidationError("y_grid must hold at least two points")
            if (np.diff(y) <= 0).any():
                raise ValidationError("y_grid must be strictly increasing")
            if not np.isfinite(y).all():
                raise ValidationError("y_grid must be finite")
            object.__setattr__(self, "y_grid", _frozen(y))

    def with_default_y(self, dataset: GroupedDataset, n_points: int = 100) -> "EvaluationGrids":
        if self.y_grid is not None:
            return self
        return EvaluationGrids(self.u_grid, default_y_grid(dataset, n_points))
