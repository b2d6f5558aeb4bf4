"""End-to-end acceptance checks.

Each test exercises one advertised guarantee at its stated tolerance and
prints a single summary line; run with `-rP` (the repo default) to see
the lines for passing tests.
"""

import itertools
import json
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import scipy.integrate
import scipy.optimize
import scipy.special
import scipy.stats

from cfdist.counterfactual import (
    CounterfactualSpec,
    FunctionalCurve,
    distribution_effect,
    marginal_cdf,
    quantile_effect,
    quantile_grid,
)
from cfdist.data import GroupedDataset, GroupSample, default_u_grid, default_y_grid
from cfdist.decomposition import (
    CURVE_FUNCTIONALS,
    SCALAR_FUNCTIONALS,
    DecompositionConfig,
    MinWagePolicy,
    decompose,
    minwage_counterfactual_cdf,
)
from cfdist.estimators import (
    ConditionalDistributionModel,
    EstimatorConfig,
    as_distribution_model,
    fit_distribution_regression,
    fit_estimator,
    fit_location_model,
    fit_quantile_regression,
    rearrange,
)
from cfdist.inference import BootstrapPlan, bootstrap_curves, gen_weights, uniform_band

from conftest import make_dataset, wage_dataset
from oracles import binary_irls_oracle, check_loss, qr_vertex_oracle, wls_normal_equations

PKG_ROOT = Path(__file__).resolve().parents[1]


def _report(line: str):
    print(line)


# ------------------------------------------------------------------ 1


def test_criterion_01_solver_oracle_equivalence():
    """Objectives/coefficients of all three fitters match brute-force oracles."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    qr_gap = dr_gap = loc_gap = 0.0
    for i in range(20):
        p = 1 + i % 3
        n_qr = {1: int(rng.integers(18, 34)), 2: int(rng.integers(14, 26)),
                3: int(rng.integers(12, 22))}[p]

        # quantile regression against vertex enumeration
        x = rng.normal(0, 1, (n_qr, p))
        y = x @ rng.uniform(-1, 1, p) + rng.logistic(0, 0.7, n_qr)
        w = rng.uniform(0.5, 2.0, n_qr)
        sample = GroupSample(y, x, w)
        tau = (0.25, 0.5, 0.75)[i % 3]
        model = fit_quantile_regression(sample, np.array([tau]))
        design = np.column_stack([np.ones(n_qr), x])
        got = check_loss(y, design, sample.weights, model.coefficients[0], tau)
        _, best = qr_vertex_oracle(y, design, sample.weights, tau)
        qr_gap = max(qr_gap, abs(got - best))
        assert got <= best + 1e-8

        # distribution regression against textbook IRLS
        n_dr = int(rng.integers(30, 51))
        xd = rng.normal(0, 1, (n_dr, min(p, 2)))
        yd = xd @ np.full(min(p, 2), 0.3) + rng.logistic(0, 1.4, n_dr)
        wd = rng.uniform(0.5, 2.0, n_dr)
        sd = GroupSample(yd, xd, wd)
        y_grid = np.quantile(yd, [0.3, 0.5, 0.7])
        dr = fit_distribution_regression(sd, y_grid)
        assert not dr.separated.any()
        designd = np.column_stack([np.ones(n_dr), xd])
        for j in range(3):
            ref = binary_irls_oracle(designd, (yd <= y_grid[j]).astype(float), sd.weights, "logit")
            dr_gap = max(dr_gap, float(np.max(np.abs(dr.coefficients[j] - ref))))

        # location model against the normal equations
        n_loc = int(rng.integers(30, 51))
        xl = rng.normal(0, 1, (n_loc, p))
        yl = 0.5 + xl @ rng.uniform(-1, 1, p) + rng.normal(0, 0.8, n_loc)
        wl = rng.uniform(0.5, 2.0, n_loc)
        sl = GroupSample(yl, xl, wl)
        u_grid = np.array([0.25, 0.5, 0.75])
        loc = fit_location_model(sl, u_grid)
        designl = np.column_stack([np.ones(n_loc), xl])
        beta = wls_normal_equations(yl, designl, sl.weights)
        loc_gap = max(loc_gap, float(np.max(np.abs(loc.coefficients[:, 1:] - beta[1:][None, :]))))

    elapsed = time.perf_counter() - t0
    assert qr_gap <= 1e-8
    assert dr_gap <= 1e-8
    assert loc_gap <= 1e-10
    assert elapsed < 30.0
    _report(
        f"criterion 1 (solver oracles): PASS qr_gap={qr_gap:.2e} dr_gap={dr_gap:.2e} "
        f"loc_gap={loc_gap:.2e} elapsed={elapsed:.1f}s"
    )


# ------------------------------------------------------------------ 2


def test_criterion_02_qr_dr_agreement_under_correct_specification():
    """Derived-from-quantiles and direct DR conditional CDFs converge to each other."""
    t0 = time.perf_counter()
    sizes = (500, 2000, 5000)
    sups = {n: [] for n in sizes}
    u_path = default_u_grid(step=0.002, lo=0.01, hi=0.99)
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        for n in sizes:
            x = rng.uniform(0.0, 2.0, n)
            y = 1.0 + 0.7 * x + rng.logistic(0, 0.8, n)
            sample = GroupSample(y, x[:, None], np.ones(n))
            y_grid = np.quantile(y, np.linspace(0.05, 0.95, 24))
            loc = fit_location_model(sample, u_path)
            f_loc = as_distribution_model(loc, y_grid).cdf_matrix(sample.covariates)
            dr = fit_distribution_regression(sample, y_grid)
            f_dr = dr.cdf_matrix(sample.covariates)
            sups[n].append(float(np.max(np.abs(f_loc - f_dr))))
    means = {n: float(np.mean(sups[n])) for n in sizes}
    worst_large = max(sups[5000])
    elapsed = time.perf_counter() - t0
    assert means[500] > means[2000] > means[5000]
    assert worst_large <= 0.05
    assert elapsed < 300.0
    _report(
        "criterion 2 (estimator agreement): PASS "
        f"mean_sup={means[500]:.3f}/{means[2000]:.3f}/{means[5000]:.3f} "
        f"max_sup_n5000={worst_large:.3f} elapsed={elapsed:.1f}s"
    )


# ------------------------------------------------------------------ 3


def test_criterion_03_identity_counterfactual_exact_zero():
    """Same conditional and covariate group: QE and DE vanish to the bit."""
    rng = np.random.default_rng(33)
    n = 200
    x = rng.uniform(0, 2, n)
    y = 1.0 + 0.8 * x + rng.logistic(0, 0.5, n)
    ds = make_dataset(y, x, y + 0.3, x + 0.1)
    u = default_u_grid(step=0.02, lo=0.04, hi=0.96)
    y_grid = default_y_grid(ds, n_points=60)
    worst = 0.0
    for kind in ("location", "qr", "dr", "duration_dr"):
        y0 = float(y_grid[y_grid.size // 2]) if kind == "duration_dr" else None
        model = fit_estimator(ds.group0, EstimatorConfig(kind=kind, y0=y0), u, y_grid)
        spec = CounterfactualSpec(0, 0)
        d_a = marginal_cdf(model, ds, spec, y_grid)
        d_b = marginal_cdf(model, ds, spec, y_grid)
        qe = quantile_effect(d_a, d_b, u)
        de = distribution_effect(d_a, d_b, y_grid)
        worst = max(worst, float(np.max(np.abs(qe.values))), float(np.max(np.abs(de.values))))
        assert np.all(qe.values == 0.0) and np.all(de.values == 0.0), kind
    _report(f"criterion 3 (identity counterfactual): PASS max_abs_effect={worst:.1e}")


# ------------------------------------------------------------------ 4


def test_criterion_04_telescoping_identity():
    """Component sum reproduces the endpoint gap for every functional and order."""
    ds = wage_dataset(n=600, seed=41)
    yg = default_y_grid(ds)
    m_old, m_new = float(yg[int(0.18 * yg.size)]), float(yg[int(0.08 * yg.size)])
    worst = 0.0
    for functional, order in itertools.product(
        CURVE_FUNCTIONALS + SCALAR_FUNCTIONALS, ("standard", "reverse")
    ):
        cfg = DecompositionConfig(
            estimator=EstimatorConfig(kind="dr"),
            policy=MinWagePolicy(strategy="ratio_scaling", m_old=m_old, m_new=m_new),
            union_col="union",
            functional=functional,
            order=order,
        )
        report = decompose(ds, cfg)
        if isinstance(report.total, FunctionalCurve):
            acc = np.zeros_like(report.total.values)
            for _, c in report.components:
                acc = acc + c.values
            gap = float(np.max(np.abs(acc - report.total.values)))
        else:
            gap = abs(sum(v for _, v in report.components) - report.total)
        worst = max(worst, gap)
        assert gap < 1e-12, (functional, order, gap)
    _report(f"criterion 4 (telescoping): PASS max_gap={worst:.1e}")


# ------------------------------------------------------------------ 5


def test_criterion_05_bootstrap_weight_laws():
    """First two moments of every exchangeable weight scheme behave as advertised."""
    n, B = 2000, 500
    stats = {}
    for scheme in ("multinomial", "bayesian", "wild"):
        plan = BootstrapPlan(scheme=scheme, replications=B, master_seed=55)
        means = np.empty(B)
        pvars = np.empty(B)
        for b in range(B):
            e = gen_weights(plan, n, b)
            means[b] = e.mean()
            pvars[b] = np.mean((e - e.mean()) ** 2)
        grand_mean = float(means.mean())
        avg_var = float(pvars.mean())
        assert abs(grand_mean - 1.0) <= 0.02, scheme
        assert abs(avg_var - 1.0) <= 0.15, scheme
        stats[scheme] = (grand_mean, avg_var)

    k = 500
    plan = BootstrapPlan(scheme="k_of_n", replications=50, master_seed=56, k=k)
    for b in range(50):
        e = gen_weights(plan, n, b)
        assert e.mean() ** 2 == k / n  # exact: n/k = 4, so the scaling is a power of two

    plan = BootstrapPlan(scheme="subsample", replications=50, master_seed=57, k=k)
    expected = n / np.sqrt((n - k) * k)
    for b in range(50):
        e = gen_weights(plan, n, b)
        nz = e[e != 0.0]
        assert nz.size == k
        assert np.all(nz == expected)

    parts = " ".join(f"{s}=({m:.3f},{v:.3f})" for s, (m, v) in stats.items())
    _report(f"criterion 5 (weight laws): PASS {parts} k_of_n/subsample exact")


# ------------------------------------------------------------------ 6


def test_criterion_06_uniform_band_coverage():
    """Nominal 90% band for a counterfactual quantile curve covers 85-95% of the time."""
    t0 = time.perf_counter()
    a, b, c, d = 0.5, 1.0, 0.4, 0.3
    n, B, reps, level = 500, 100, 200, 0.9
    u_path = np.round(np.arange(0.02, 0.981, 0.02), 10)
    u_eval = np.round(np.arange(0.10, 0.901, 0.02), 10)
    y_grid = np.linspace(-3.5, 6.5, 1200)
    spec = CounterfactualSpec(0, 1)

    # population counterfactual quantiles: model from group 0, covariates U(0.2, 1.2)
    nodes, wq = np.polynomial.legendre.leggauss(200)
    xs = 0.7 + 0.5 * nodes  # map [-1, 1] -> [0.2, 1.2]
    wq = wq * 0.5

    def f_true(y):
        return float(np.sum(wq * scipy.stats.norm.cdf((y - a - b * xs) / (c + d * xs))))

    truth = np.array(
        [scipy.optimize.brentq(lambda t, uu=uu: f_true(t) - uu, -3.5, 6.5, xtol=1e-10) for uu in u_eval]
    )

    def pipeline(dset):
        model = fit_quantile_regression(dset.group0, u_path)
        dist = marginal_cdf(model, dset, spec, y_grid)
        vals, _ = quantile_grid(dist, u_eval)
        return vals

    covered = 0
    for rep in range(reps):
        rng = np.random.default_rng(6000 + rep)
        samples = []
        for lo in (0.0, 0.2):
            x = rng.uniform(lo, lo + 1.0, n)
            y = a + b * x + (c + d * x) * rng.normal(0, 1, n)
            samples.append(GroupSample(y, x[:, None], np.ones(n)))
        ds = GroupedDataset(samples[0], samples[1], ("x0",), ("0", "1"))
        est = pipeline(ds)
        plan = BootstrapPlan(scheme="bayesian", replications=B, master_seed=rep)
        draws = bootstrap_curves(ds, pipeline, plan)
        band = uniform_band(FunctionalCurve(u_eval, est, "quantile"), draws, level)
        inside = np.all((truth >= band.lower.values) & (truth <= band.upper.values))
        covered += int(inside)
    coverage = covered / reps
    elapsed = time.perf_counter() - t0
    assert 0.85 <= coverage <= 0.95
    assert elapsed < 1200.0
    _report(
        f"criterion 6 (band coverage): PASS coverage={coverage:.3f} "
        f"n={n} B={B} reps={reps} elapsed={elapsed:.0f}s"
    )


# ------------------------------------------------------------------ 7


def test_criterion_07_variance_channel_identity():
    """Between-x and within-x channels add up to the total outcome variance."""
    from cfdist.decomposition import variance_channels

    rng = np.random.default_rng(77)
    n = 5000
    x = rng.uniform(0.0, 1.0, n)
    u = rng.random(n)
    y = scipy.special.ndtri(u) + (1.0 + 0.5 * u) * x
    sample = GroupSample(y, x[:, None], np.ones(n))
    model = fit_quantile_regression(sample, np.round(np.arange(0.005, 0.9951, 0.005), 10))
    between, within = variance_channels(model, sample)
    w = sample.weights
    var_y = float(w @ (y - w @ y) ** 2)
    rel_err = abs(between + within - var_y) / var_y
    assert rel_err < 0.05
    _report(
        f"criterion 7 (variance channels): PASS rel_err={rel_err:.4f} "
        f"between={between:.3f} within={within:.3f} var_y={var_y:.3f}"
    )


# ------------------------------------------------------------------ 8


def test_criterion_08_minwage_construction():
    """Ratio strategy is continuous at the floor; censoring puts zero mass below it."""
    rng = np.random.default_rng(88)
    y_grid = np.linspace(0.0, 4.0, 41)
    n = 500

    def fit(level):
        x = rng.normal(0, 1, n)
        y = np.clip(level + 0.4 * x + rng.normal(0, 0.5, n), 0.05, 3.95)
        return fit_distribution_regression(GroupSample(y, x[:, None], np.ones(n)), y_grid)

    model_new, model_old = fit(1.6), fit(1.2)
    x_eval = rng.normal(0, 1, (40, 1))

    ratio = minwage_counterfactual_cdf(
        model_new, model_old, MinWagePolicy(strategy="ratio_scaling", m_old=1.0, m_new=0.5)
    )
    ti = ratio.threshold_index
    f = ratio.cdf_matrix(x_eval)
    f_new = ratio.model_new.cdf_matrix(x_eval)
    f_old = ratio.model_old.cdf_matrix(x_eval)
    np.testing.assert_array_equal(f[ti:], f_new[ti:])  # upper branch verbatim
    junction_gap = float(np.max(np.abs(f_old[ti] * (f_new[ti] / f_old[ti]) - f[ti])))
    assert junction_gap <= 4 * np.finfo(float).eps
    assert np.all(np.diff(f, axis=0) >= 0)

    censor = minwage_counterfactual_cdf(
        model_new, model_old, MinWagePolicy(strategy="censoring", m_old=1.0, m_new=0.5)
    )
    fc = censor.cdf_matrix(x_eval)
    assert np.all(fc[:ti] == 0.0)
    ds = make_dataset(np.ones(40), x_eval, np.ones(40), x_eval)
    dist = marginal_cdf(censor, ds, CounterfactualSpec(0, 0), y_grid)
    assert np.all(dist.cdf_values[:ti] == 0.0)
    _report(f"criterion 8 (wage-floor construction): PASS junction_gap={junction_gap:.1e}")


# ------------------------------------------------------------------ 9


def test_criterion_09_thread_count_determinism(tmp_path):
    """decompose output bytes do not depend on the worker count."""
    rng = np.random.default_rng(99)
    rows = ["wage,union,skill,year,w"]
    for g in (0, 1):
        n = 200
        u = (rng.random(n) < 0.3).astype(float)
        z = rng.uniform(0, 2, n)
        y = 1.0 + 0.8 * u + 0.6 * z + rng.normal(0, 0.5, n) + 0.2 * g
        w = rng.uniform(0.5, 1.5, n)
        for i in range(n):
            rows.append(f"{y[i]},{u[i]},{z[i]},{g},{w[i]}")
    (tmp_path / "data.csv").write_text("\n".join(rows) + "\n")
    config = {
        "input": str(tmp_path / "data.csv"),
        "columns": {"outcome": "wage", "covariates": ["union", "skill"], "group": "year",
                    "weight": "w"},
        "estimator": {"kind": "qr"},
        "grids": {"u_step": 0.02, "u_min": 0.04, "u_max": 0.96, "y_points": 40},
        "bootstrap": {"scheme": "bayesian", "replications": 20},
        "decomposition": {"strategy": "censoring", "m_old": 1.2, "m_new": 0.9,
                          "union_col": "union", "functionals": ["quantile", "gini"]},
        "seed": 7,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    outs = {}
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        r = subprocess.run(
            [sys.executable, "-m", "cfdist", "decompose", str(tmp_path / "config.json"),
             "--output-dir", str(out), "--threads", str(threads)],
            capture_output=True, text=True, cwd=PKG_ROOT,
        )
        assert r.returncode == 0, r.stderr
        outs[threads] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert outs[1].keys() == outs[8].keys() and len(outs[1]) >= 2
    for name in outs[1]:
        assert outs[1][name] == outs[8][name], name
    _report(f"criterion 9 (determinism): PASS {len(outs[1])} files byte-identical across 1/8 threads")


# ------------------------------------------------------------------ 10


def test_criterion_10_rearrangement_properties():
    """Monotone rearrangement preserves the value multiset and is idempotent."""
    rng = np.random.default_rng(110)
    x = np.zeros((1, 0))
    for _ in range(1000):
        m = int(rng.integers(2, 61))
        vals = rng.uniform(0.01, 0.99, m)
        model = ConditionalDistributionModel(
            kind="distribution_regression",
            y_grid=np.arange(m, dtype=float),
            covariate_names=(),
            training_box=np.empty((0, 2)),
            link="logit",
            coefficients=scipy.special.logit(vals)[:, None],
            degenerate=np.zeros(m, dtype=np.int8),
            separated=np.zeros(m, dtype=bool),
        )
        raw = model.cdf_matrix(x)[:, 0]
        once = rearrange(model)
        sorted_vals = once.cdf_matrix(x)[:, 0]
        np.testing.assert_array_equal(sorted_vals, np.sort(raw))
        np.testing.assert_array_equal(rearrange(once).cdf_matrix(x)[:, 0], sorted_vals)
    _report("criterion 10 (rearrangement): PASS 1000 vectors, multiset and idempotence exact")
