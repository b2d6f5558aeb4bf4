"""Shared dataset builders for the test suite."""

import numpy as np

from cfdist.data import GroupedDataset, GroupSample


def make_dataset(y0, x0, y1, x1, w0=None, w1=None, names=None) -> GroupedDataset:
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if x1.ndim == 1:
        x1 = x1[:, None]
    if names is None:
        names = tuple(f"x{i}" for i in range(x0.shape[1]))
    g0 = GroupSample(y0, x0, np.ones(y0.size) if w0 is None else np.asarray(w0, float))
    g1 = GroupSample(y1, x1, np.ones(y1.size) if w1 is None else np.asarray(w1, float))
    return GroupedDataset(g0, g1, tuple(names))


def location_dataset(n=300, seed=0, shift=0.4) -> GroupedDataset:
    """Two groups differing in covariate location; additive normal errors."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.0, 2.0, n)
    x1 = rng.uniform(shift, 2.0 + shift, n)
    y0 = 1.0 + 0.8 * x0 + rng.normal(0.0, 0.5, n)
    y1 = 1.0 + 0.8 * x1 + rng.normal(0.0, 0.5, n)
    return make_dataset(y0, x0, y1, x1)


def wage_dataset(n=500, seed=3) -> GroupedDataset:
    """Wage-shaped panel: union and skill covariates, heavier upper tail.

    Group 0 plays the late year (lower union share, higher dispersion),
    group 1 the early year, matching the decomposition conventions.
    """
    rng = np.random.default_rng(seed)

    def one(union_rate, disp, level):
        u = (rng.random(n) < union_rate).astype(float)
        z = rng.uniform(0.0, 2.0, n)
        eps = rng.normal(0.0, disp, n)
        y = np.exp(level + 0.35 * u + 0.45 * z + eps)
        w = rng.uniform(0.5, 1.5, n)
        return y, np.column_stack([u, z]), w

    y0, x0, w0 = one(0.18, 0.55, 0.25)
    y1, x1, w1 = one(0.35, 0.40, 0.15)
    return make_dataset(y0, x0, y1, x1, w0=w0, w1=w1, names=("union", "skill"))
