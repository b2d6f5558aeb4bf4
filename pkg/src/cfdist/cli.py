"""Command-line front end.

One JSON config document describes a run; flags override only the seed,
the output directory, and the thread count, so a run is reproducible
from the config artifact alone.  Subcommands:

    fit             fit the configured estimator, write the model JSON
    counterfactual  marginal distributions, effect curves, bands, tests
    decompose       sequential decomposition with bands
    bands-audit     dump the bootstrap draw matrix for inspection

Every output file carries a metadata block (tool version, seed, config
hash); floats are serialized with 17 significant digits; outputs are
byte-identical for a fixed (input, config, seed) regardless of threads.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._jsonio import dumps as json_dumps, format_float
from .counterfactual import (
    CounterfactualSpec,
    FunctionalCurve,
    gini,
    lorenz,
    marginal_cdf,
    mean,
    quantile_grid,
    variance,
)
from .data import GroupedDataset, default_u_grid, default_y_grid, load_csv
from .decomposition import (
    DecompositionConfig,
    MinWagePolicy,
    decompose,
    smooth_curve,
)
from .estimators import EstimatorConfig, fit_estimator
from .exceptions import (
    CfdistError,
    ConfigError,
    DataError,
    NumericalError,
)
from .inference import BootstrapPlan, bootstrap_curves, ks_tests, uniform_band

SCALAR_FUNCTIONALS = ("gini", "mean", "variance")
CURVE_FUNCTIONALS = ("cdf", "quantile", "QE", "DE", "lorenz")


def _get(cfg: dict, path: str, default=None, required: bool = False):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing config field '{path}'")
            return default
        node = node[part]
    return node


def _config_hash(effective: dict) -> str:
    return hashlib.sha256(json_dumps(effective).encode("utf-8")).hexdigest()


class RunContext:
    """Parsed config plus the derived objects every subcommand needs."""

    def __init__(self, config: dict, output_dir: str, threads: int):
        self.config = config
        self.threads = threads
        self.output_dir = Path(output_dir)
        self.seed = _get(config, "seed")
        self.meta = {
            "tool_version": __version__,
            "seed": self.seed,
            "config_hash": _config_hash(config),
        }

    def load_dataset(self) -> GroupedDataset:
        cols = _get(self.config, "columns", required=True)
        if not isinstance(cols, dict):
            raise ConfigError("config field 'columns' must be an object")
        try:
            return load_csv(
                _get(self.config, "input", required=True),
                outcome_col=_get(self.config, "columns.outcome", required=True),
                covariate_cols=_get(self.config, "columns.covariates", required=True),
                group_col=_get(self.config, "columns.group", required=True),
                weight_col=_get(self.config, "columns.weight"),
                group_order=_get(self.config, "columns.group_order"),
            )
        except FileNotFoundError as exc:
            raise DataError(f"input file not found: {exc.filename}") from exc

    def grids(self, dataset: GroupedDataset):
        u_step = float(_get(self.config, "grids.u_step", 0.001))
        u_min = float(_get(self.config, "grids.u_min", 0.02))
        u_max = float(_get(self.config, "grids.u_max", 0.98))
        y_points = int(_get(self.config, "grids.y_points", 100))
        if not (0 < u_min <= u_max < 1) or u_step <= 0:
            raise ConfigError("grids: need 0 < u_min <= u_max < 1 and u_step > 0")
        u = default_u_grid(step=u_step, lo=u_min, hi=u_max)
        y = default_y_grid(dataset, n_points=y_points)
        return u, y

    def estimator(self) -> EstimatorConfig:
        block = _get(self.config, "estimator", required=True)
        try:
            return EstimatorConfig(
                kind=block.get("kind"),
                link=block.get("link", "logit"),
                y0=block.get("y0"),
            )
        except CfdistError as exc:
            raise ConfigError(f"estimator: {exc}") from exc

    def bootstrap_plan(self) -> BootstrapPlan | None:
        block = _get(self.config, "bootstrap")
        if block is None:
            return None
        if self.seed is None:
            raise ConfigError("a seed is mandatory for any bootstrap run")
        try:
            return BootstrapPlan(
                scheme=block.get("scheme", "bayesian"),
                replications=int(block.get("replications", 100)),
                master_seed=int(self.seed),
                k=block.get("k"),
                wild_law=block.get("wild_law", "exponential"),
            )
        except CfdistError as exc:
            raise ConfigError(f"bootstrap: {exc}") from exc

    def write_json(self, name: str, payload: dict) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        doc = {"_meta": self.meta, **payload}
        path.write_text(json_dumps(doc) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        lines = [f"# {k}: {v}" for k, v in self.meta.items()]
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_csv_cell(v) for v in row))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_float(float(v))


def _affine_transform(block: dict, n_covariates: int):
    scale = np.asarray(block.get("scale", [1.0] * n_covariates), dtype=float)
    shift = np.asarray(block.get("shift", [0.0] * n_covariates), dtype=float)
    if scale.shape != (n_covariates,) or shift.shape != (n_covariates,):
        raise ConfigError("transform scale/shift must list one value per covariate")

    def transform(x):
        return x * scale[None, :] + shift[None, :]

    return transform


def _spec_from_block(block: dict, n_covariates: int) -> CounterfactualSpec:
    transform = None
    if block.get("transform") is not None:
        transform = _affine_transform(block["transform"], n_covariates)
    try:
        return CounterfactualSpec(
            conditional_group=int(block.get("conditional_group", 0)),
            covariate_group=int(block.get("covariate_group", 0)),
            covariate_transform=transform,
        )
    except CfdistError as exc:
        raise ConfigError(f"counterfactual spec: {exc}") from exc


def cmd_fit(ctx: RunContext) -> int:
    dataset = ctx.load_dataset()
    u, y = ctx.grids(dataset)
    est = ctx.estimator()
    group = int(_get(ctx.config, "fit.group", 0))
    if group not in (0, 1):
        raise ConfigError("fit.group must be 0 or 1")
    model = fit_estimator(dataset.group(group), est, u, y)
    ctx.write_json("fit.model.json", model.to_dict())

    diag = {"estimator_kind": est.kind, "group": group}
    degenerate = getattr(model, "degenerate", None)
    separated = getattr(model, "separated", None)
    diag["degenerate_grid_points"] = [] if degenerate is None else np.flatnonzero(degenerate).tolist()
    diag["separated_grid_points"] = [] if separated is None else np.flatnonzero(separated).tolist()
    diag["extrapolated_fraction"] = {
        "group0": model.extrapolation_fraction(dataset.group(0).covariates),
        "group1": model.extrapolation_fraction(dataset.group(1).covariates),
    }
    ctx.write_json("fit.diagnostics.json", {"diagnostics": diag})
    return 0


def _counterfactual_pipeline(ctx: RunContext, dataset: GroupedDataset):
    """Build the statistic pipeline and the layout of its output vector."""
    u, y = ctx.grids(dataset)
    est = ctx.estimator()
    block = _get(ctx.config, "counterfactual", required=True)
    spec_main = _spec_from_block(block, dataset.group(0).n_covariates)
    base_block = block.get("baseline", {"conditional_group": 0, "covariate_group": 0})
    spec_base = _spec_from_block(base_block, dataset.group(0).n_covariates)
    functionals = block.get("functionals", ["quantile", "QE"])
    for f in functionals:
        if f not in SCALAR_FUNCTIONALS + CURVE_FUNCTIONALS:
            raise ConfigError(f"unknown functional {f!r}")

    layout = []  # (functional, grid array or None)
    offset = 0
    for f in functionals:
        if f in ("quantile", "QE"):
            grid = u
        elif f in ("cdf", "DE", "lorenz"):
            grid = y
        else:
            grid = None
        size = 1 if grid is None else grid.size
        layout.append((f, grid, offset, size))
        offset += size

    def pipeline(d: GroupedDataset) -> np.ndarray:
        groups_needed = {spec_main.conditional_group, spec_base.conditional_group}
        models = {g: fit_estimator(d.group(g), est, u, y) for g in groups_needed}
        dist_main = marginal_cdf(models[spec_main.conditional_group], d, spec_main, y)
        dist_base = marginal_cdf(models[spec_base.conditional_group], d, spec_base, y)
        parts = []
        for f, grid, _, _ in layout:
            if f == "cdf":
                parts.append(dist_main.cdf_values)
            elif f == "quantile":
                parts.append(quantile_grid(dist_main, u)[0])
            elif f == "QE":
                parts.append(quantile_grid(dist_main, u)[0] - quantile_grid(dist_base, u)[0])
            elif f == "DE":
                parts.append(dist_main.cdf_values - dist_base.cdf_values)
            elif f == "lorenz":
                parts.append(np.array([lorenz(dist_main, yy) for yy in y]))
            elif f == "gini":
                parts.append(np.array([gini(dist_main)]))
            elif f == "mean":
                parts.append(np.array([mean(dist_main)]))
            else:
                parts.append(np.array([variance(dist_main)]))
        return np.concatenate(parts)

    return pipeline, layout, spec_main, spec_base


def cmd_counterfactual(ctx: RunContext) -> int:
    dataset = ctx.load_dataset()
    pipeline, layout, spec_main, spec_base = _counterfactual_pipeline(ctx, dataset)
    estimate = pipeline(dataset)
    plan = ctx.bootstrap_plan()
    level = float(_get(ctx.config, "band_level", 0.9))
    draws = bootstrap_curves(dataset, pipeline, plan, n_jobs=ctx.threads) if plan else None

    rows = []
    report = {
        "band_level": level if plan else None,
        "replications": None if plan is None else int(draws.shape[0]),
        "specs": {
            "counterfactual": {
                "conditional_group": spec_main.conditional_group,
                "covariate_group": spec_main.covariate_group,
            },
            "baseline": {
                "conditional_group": spec_base.conditional_group,
                "covariate_group": spec_base.covariate_group,
            },
        },
        "critical_values": {},
        "scalars": {},
        "ks_tests": {},
    }
    for f, grid, off, size in layout:
        est_seg = estimate[off : off + size]
        lower = upper = se = [None] * size
        if draws is not None:
            seg = draws[:, off : off + size]
            curve = FunctionalCurve(
                grid if grid is not None else np.array([0.0]), est_seg, f
            )
            band = uniform_band(curve, seg, level)
            lower, upper, se = band.lower.values, band.upper.values, band.pointwise_se.values
            report["critical_values"][f] = band.critical_value
            if f in ("QE", "DE"):
                report["ks_tests"][f] = {
                    null: ks_tests(curve, seg, null).to_dict()
                    for null in ("no_effect", "constant_effect", "positive_effect")
                }
        if grid is None:
            rows.append([f, None, est_seg[0], lower[0], upper[0], se[0]])
            report["scalars"][f] = {
                "estimate": est_seg[0],
                "lower": lower[0],
                "upper": upper[0],
                "se": se[0],
            }
        else:
            for i in range(size):
                rows.append([f, grid[i], est_seg[i], lower[i], upper[i], se[i]])
    ctx.write_csv("counterfactual.curves.csv", ["functional", "grid", "estimate", "lower", "upper", "se"], rows)
    ctx.write_json("counterfactual.report.json", {"report": report})
    return 0


def _decomposition_config(ctx: RunContext, dataset: GroupedDataset, functional: str) -> DecompositionConfig:
    block = _get(ctx.config, "decomposition", required=True)
    u, y = ctx.grids(dataset)
    try:
        policy = MinWagePolicy(
            strategy=block.get("strategy", "ratio_scaling"),
            m_old=float(_get(ctx.config, "decomposition.m_old", required=True)),
            m_new=float(_get(ctx.config, "decomposition.m_new", required=True)),
        )
        union_z = block.get("union_z_cols")
        return DecompositionConfig(
            estimator=ctx.estimator(),
            policy=policy,
            union_col=_get(ctx.config, "decomposition.union_col", required=True),
            union_z_cols=None if union_z is None else tuple(union_z),
            functional=functional,
            order=block.get("order", "standard"),
            u_grid=u,
            y_grid=y,
        )
    except CfdistError as exc:
        raise ConfigError(f"decomposition: {exc}") from exc


def cmd_decompose(ctx: RunContext) -> int:
    dataset = ctx.load_dataset()
    block = _get(ctx.config, "decomposition", required=True)
    functionals = block.get("functionals", ["quantile"])
    plan = ctx.bootstrap_plan()
    level = float(_get(ctx.config, "band_level", 0.9))

    reports = []
    rows = []
    smooth_rows = []
    for functional in functionals:
        cfg = _decomposition_config(ctx, dataset, functional)
        report = decompose(dataset, cfg, plan=plan, level=level, n_jobs=ctx.threads)
        reports.append(report.to_dict())
        entries = [("total", report.total), *report.components]
        for name, value in entries:
            band = report.bands.get(name) if report.bands else None
            if isinstance(value, FunctionalCurve):
                for i in range(value.index_grid.size):
                    rows.append(
                        [
                            functional,
                            name,
                            value.index_grid[i],
                            value.values[i],
                            None if band is None else band.lower.values[i],
                            None if band is None else band.upper.values[i],
                        ]
                    )
                if block.get("smooth_display") and functional == "quantile":
                    sm = smooth_curve(value)
                    for i in range(sm.index_grid.size):
                        smooth_rows.append(
                            [functional, name, sm.index_grid[i], sm.values[i], None, None]
                        )
            else:
                rows.append(
                    [
                        functional,
                        name,
                        None,
                        value,
                        None if band is None else band.lower.values[0],
                        None if band is None else band.upper.values[0],
                    ]
                )
    header = ["functional", "component", "grid", "estimate", "lower", "upper"]
    ctx.write_csv("decompose.curves.csv", header, rows)
    ctx.write_json("decompose.report.json", {"reports": reports})
    if smooth_rows:
        ctx.write_csv("decompose.smoothed.csv", header, smooth_rows)
    return 0


def cmd_bands_audit(ctx: RunContext) -> int:
    dataset = ctx.load_dataset()
    plan = ctx.bootstrap_plan()
    if plan is None:
        raise ConfigError("bands-audit requires a bootstrap block in the config")
    pipeline, layout, _, _ = _counterfactual_pipeline(ctx, dataset)
    draws = bootstrap_curves(dataset, pipeline, plan, n_jobs=ctx.threads)
    rows = []
    for b in range(draws.shape[0]):
        for f, grid, off, size in layout:
            for i in range(size):
                rows.append([b, f, None if grid is None else grid[i], draws[b, off + i]])
    ctx.write_csv("bands_audit.draws.csv", ["replication", "functional", "grid", "value"], rows)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "counterfactual": cmd_counterfactual,
    "decompose": cmd_decompose,
    "bands-audit": cmd_bands_audit,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfdist",
        description="Counterfactual distribution estimation, inference, and decomposition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output-dir", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        try:
            raw = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            config = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigError("config root must be a JSON object")
        if args.seed is not None:
            config["seed"] = args.seed
        output_dir = args.output_dir or config.get("output_dir", ".")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        ctx = RunContext(config, output_dir, args.threads)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except CfdistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
